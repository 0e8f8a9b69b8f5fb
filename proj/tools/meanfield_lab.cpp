// meanfield-lab <experiment> --config <path> [--key.path=value ...]

#include "meanfield/errors.hpp"
#include "meanfield/lab.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    CLI::App app{"Mean-field two-layer network experiments"};
    std::string experiment;
    std::string config;
    bool print_defaults = false;
    std::string names;
    for (const auto& n : meanfield::experiment_names()) names += (names.empty() ? "" : ", ") + n;
    app.add_option("experiment", experiment, "one of: " + names)->required();
    app.add_option("--config", config, "JSON file; keys mirror the dotted override paths");
    app.add_flag("--print-defaults", print_defaults, "print the default tree for the experiment and exit");
    app.allow_extras();
    app.footer("Overrides: --section.key=value (e.g. --dynamics.eps=1e-3). Outputs go under --io.out_dir.\n"
               "MEANFIELD_LAB_THREADS sets the worker count.\n"
               "Exit codes: 0 ok, 2 configuration, 3 I/O, 4 numerical divergence.");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : meanfield::kExitConfig;
    }

    std::string message;
    try {
        if (print_defaults) {
            std::cout << meanfield::default_config(experiment).dump(2) << "\n";
            return meanfield::kExitOk;
        }
        // accept both --key=value and --key value
        std::vector<std::string> overrides;
        const auto extras = app.remaining();
        for (std::size_t i = 0; i < extras.size(); ++i) {
            std::string tok = extras[i];
            if (tok.rfind("--", 0) != 0) throw meanfield::ConfigError("unexpected argument " + tok);
            if (tok.find('=') == std::string::npos && i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0)
                tok += "=" + extras[++i];
            overrides.push_back(tok);
        }
        const auto cfg = meanfield::parse_and_validate(experiment, config, overrides);
        const auto out = meanfield::run_experiment(cfg);
        for (const auto& f : out.files) std::cout << f.string() << "\n";
        return meanfield::kExitOk;
    } catch (...) {
        const int rc = meanfield::exit_code_for_current_exception(message);
        std::cerr << "meanfield-lab: " << message << "\n";
        return rc;
    }
}
