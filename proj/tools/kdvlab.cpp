// kdvlab command-line front end.

#include <iostream>

#include "CLI11.hpp"
#include "kdvlab/cli_io.hpp"

namespace {

int emit(const kdvlab::RunOutcome& o) {
    std::cout << o.stdout_text;
    std::cerr << "run directory: " << o.dir.string() << "\n";
    return o.exit_code;
}

int config_error(const kdvlab::ConfigError& e) {
    kdvlab::json err = kdvlab::error_json(e.code(), e.what());
    err["problems"] = e.problems;
    std::cout << kdvlab::json{{"error", err}}.dump() << "\n";
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Boundary control experiments for the KdV equation on a bounded interval"};
    app.require_subcommand(1);

    kdvlab::ExperimentConfig flags;
    bool as_json = false, as_csv = false;
    std::string config_path, mode;

    auto* crit = app.add_subcommand("critical-lengths", "list critical lengths up to lmax");
    crit->add_option("--c", flags.c, "drift constant c (> -1)")->required();
    crit->add_option("--lmax", flags.lmax, "largest length")->required();
    auto* fmt = crit->add_option_group("format");
    fmt->add_flag("--json", as_json);
    fmt->add_flag("--csv", as_csv);
    fmt->require_option(0, 1);

    auto* gram = app.add_subcommand("gramian", "singular spectrum of the control-to-final-state map");
    flags.T = 1.0;
    gram->add_option("--L", flags.L)->required();
    gram->add_option("--c", flags.c)->required();
    gram->add_option("--nx", flags.nx, "spatial intervals")->capture_default_str();
    gram->add_option("--nt", flags.nt, "time steps")->capture_default_str();
    gram->add_option("--basis", flags.basis, "control basis size")->capture_default_str();
    gram->add_option("--T", flags.T, "control horizon")->capture_default_str();
    gram->add_option("--modes", flags.state_modes, "cosine modes kept in the final state (0: all)")
        ->capture_default_str();
    gram->add_option("--threshold", flags.threshold, "defect-mode threshold on sigma/sigma_max")
        ->capture_default_str();
    gram->add_flag("--json", as_json, "print the spectrum as a JSON array (default)");

    std::vector<CLI::App*> cfg_cmds;
    for (const char* name : {"simulate", "steer-linear", "steer", "return-method"}) {
        auto* sub = app.add_subcommand(name, std::string(name) + " driven by a key=value config file");
        sub->add_option("--config", config_path, "config file")->required();
        cfg_cmds.push_back(sub);
    }
    cfg_cmds[2]->add_option("--mode", mode, "to-const | from-const | local")
        ->required()
        ->check(CLI::IsMember({"to-const", "from-const", "local"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (crit->parsed()) {
            kdvlab::validate(flags);
            return emit(kdvlab::run("critical-lengths", flags, "", as_json));
        }
        if (gram->parsed()) {
            kdvlab::validate(flags);
            return emit(kdvlab::run("gramian", flags, "", true));
        }
        for (auto* sub : cfg_cmds)
            if (sub->parsed()) return emit(kdvlab::run(sub->get_name(), kdvlab::parse_config(config_path), mode));
    } catch (const kdvlab::ConfigError& e) {
        return config_error(e);
    }
    return 2;
}
