#include "riccilab/experiments.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

int run_command(const std::string& config_path, std::optional<std::uint64_t> seed,
                std::optional<std::string> out_dir) {
    std::ifstream in(config_path);
    if (!in) throw ricci::input_error("cannot open config file '" + config_path + "'");
    ricci::json doc;
    try {
        doc = ricci::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ricci::input_error(std::string("config parse error: ") + e.what());
    }
    auto cfg = ricci::parse_config(doc);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out_dir = *out_dir;
    return ricci::run_experiment(cfg);
}

void emit_error(const char* type, const std::string& message) {
    ricci::json err{{"error", {{"type", type}, {"message", message}}}};
    std::cerr << err.dump() << std::endl;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ricci-lab: curvature checks on finite metric measure spaces"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
    run->add_option("config", config_path, "Path to the experiment config (JSON)")->required();
    run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--out", out_dir, "Output directory (default: config 'out' or ./out)");
    run->footer(ricci::experiment_help());

    auto* list = app.add_subcommand("list", "List the experiment catalog");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (list->parsed()) {
            for (const auto& name : ricci::experiment_catalog()) std::cout << name << '\n';
            return 0;
        }
        return run_command(config_path, seed, out_dir);
    } catch (const ricci::input_error& e) {
        emit_error("input", e.what());
        return 2;
    } catch (const ricci::unsupported_geometry_error& e) {
        emit_error("input", e.what());
        return 2;
    } catch (const nlohmann::json::exception& e) {
        emit_error("input", e.what());
        return 2;
    } catch (const ricci::numeric_error& e) {
        emit_error("numeric", e.what());
        return 3;
    } catch (const std::exception& e) {
        emit_error("internal", e.what());
        return 3;
    }
}
