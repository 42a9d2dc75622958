#pragma once

#include <stdexcept>
#include <string>

namespace kdvlab {

// Base error. code() is module-qualified, e.g. "linear_control.domain".
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct DomainError : Error {
    DomainError(const std::string& module, const std::string& msg) : Error(module + ".domain", msg) {}
};

struct NotCriticalError : Error {
    explicit NotCriticalError(const std::string& msg) : Error("critical_lengths.not_critical", msg) {}
};

struct CriticalLengthError : Error {
    explicit CriticalLengthError(const std::string& msg)
        : Error("nonlinear_control.critical_length", msg) {}
};

struct ShapeError : Error {
    ShapeError(const std::string& module, const std::string& msg) : Error(module + ".shape", msg) {}
};

struct SingularSystemError : Error {
    SingularSystemError(const std::string& msg, int step)
        : Error("kdv_solver.singular", msg), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

// Non-finite values appeared in a time slice.
struct BlowUpError : Error {
    BlowUpError(const std::string& msg, int step) : Error("kdv_solver.blow_up", msg), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

struct NoConvergenceError : Error {
    NoConvergenceError(const std::string& module, const std::string& msg)
        : Error(module + ".no_convergence", msg) {}
};

struct PreconditionError : Error {
    PreconditionError(const std::string& module, const std::string& msg)
        : Error(module + ".precondition", msg) {}
};

struct PlanError : Error {
    explicit PlanError(const std::string& msg) : Error("return_method.plan", msg) {}
};

struct AuditFailure : Error {
    explicit AuditFailure(const std::string& msg) : Error("return_method.audit", msg) {}
};

}  // namespace kdvlab
