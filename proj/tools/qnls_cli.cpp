// Command-line front end:  qnls <command> --config <path> [--set key=value ...]

#include "qnls/config.hpp"
#include "qnls/errors.hpp"
#include "qnls/run.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw qnls::ParameterError("cannot open config '" + path + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Normalized sign-changing solutions of a quasilinear Schrodinger equation"};
    std::string command;
    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("command", command, "solve | multisolve | certify-dual | check-equivalence | probe | sweep")
        ->required()
        ->check(CLI::IsMember(qnls::command_names()));
    app.add_option("--config", config_path, "INI-style config with [model], [grid], [flow], [run]")->required();
    app.add_option("--set", overrides, "override applied after the file, e.g. --set model.p=2.5");
    app.footer(std::string("Output root defaults to $") + qnls::kOutputRootEnv + " (else ./runs).\n"
               "Exit status: 0 ok, 2 parameter error, 3 numeric or convergence failure, 4 multisolve shortfall.");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return qnls::kExitParameter;
    }

    qnls::RunConfig config;
    try {
        config = qnls::parse_config_unvalidated(read_file(config_path));
        for (const auto& o : overrides) qnls::apply_override(config, o);
        config.validate();
    } catch (const qnls::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return qnls::kExitParameter;
    }

    try {
        const auto out = qnls::run_command(command, config);
        std::cout << out.dir.string() << '\n';
        if (!out.message.empty()) std::cerr << "error: " << out.message << '\n';
        return out.status;
    } catch (const qnls::ParameterError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return qnls::kExitParameter;
    } catch (const qnls::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return qnls::kExitNumeric;
    }
}
