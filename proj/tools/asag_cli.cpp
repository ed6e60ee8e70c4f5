// asag_cli: train | sample | eval | plan | sweep
//
// Exit codes: 0 ok, 1 usage error, 2 input/parse error, 3 numerical failure.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "asag/cli.hpp"

namespace {

using asag::cli::option_table;

const std::map<std::string, std::string> command_help{
    {"train", "train the toy denoiser; writes checkpoint/ and loss.csv"},
    {"sample", "guided DDIM sampling; writes samples.csv and trace.jsonl"},
    {"eval", "score a samples CSV against fresh ground truth; writes metrics.json"},
    {"plan", "solve one Sinkhorn plan; writes plan.csv and plan.json"},
    {"sweep", "guidance-scale sweep; writes sweep.csv"},
};

std::string flag_name(const std::string& key) {
    std::string f = key;
    for (auto& ch : f)
        if (ch == '_') ch = '-';
    return "--" + f;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial Sinkhorn attention guidance on toy 2-D diffusion"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::map<std::string, std::map<std::string, std::optional<std::string>>> flags;

    for (const auto& [name, help] : command_help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "flat key = value config file (flags override it)");
        sub->add_option("--seed", seed, "RNG seed")->default_val(0);
        sub->add_option("--out", out_dir, "output directory")->default_val(".");
        for (const auto& o : option_table()) {
            bool used = false;
            for (const auto& c : o.commands) used |= c == name;
            if (!used) continue;
            sub->add_option(flag_name(o.key), flags[name][o.key], o.help)
                ->default_str(o.default_value.empty() ? "\"\"" : o.default_value);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        asag::cli::Context ctx;
        ctx.seed = seed;
        ctx.out = out_dir;
        if (!config_path.empty()) ctx.settings.merge(asag::io::load_config(config_path), config_path);
        for (const auto& [key, value] : flags[cmd])
            if (value) ctx.settings.set(key, *value);

        if (cmd == "train") return asag::cli::cmd_train(ctx);
        if (cmd == "sample") return asag::cli::cmd_sample(ctx);
        if (cmd == "eval") return asag::cli::cmd_eval(ctx);
        if (cmd == "plan") return asag::cli::cmd_plan(ctx);
        if (cmd == "sweep") return asag::cli::cmd_sweep(ctx);
        return 1;
    } catch (const asag::cli::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const asag::ContractError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const asag::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const asag::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const asag::DimensionError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    }
}
