#include <iostream>

#include "CLI11.hpp"
#include "ubiquity/cli.hpp"

namespace uc = ubiquity::cli;

int main(int argc, char** argv)
{
    CLI::App app{"Ubiquity experiments: dimension formula, box counts, Cantor constructions and certificates"};
    app.require_subcommand(1, 1);

    std::string config_path, levels;
    std::uint64_t seed = 0;
    unsigned threads = 0;
    std::string out;
    int depth = 0;
    std::int64_t cell_budget = 0;

    const char* blurbs[] = {"print s(mu, tau) and the f(v) scan", "box-count slope of the shrunk rectangles",
                            "build a Cantor tree and audit it",   "build a tree and run the Holder certificate",
                            "tail coverage of the ball sequence", "box-count slope over several profiles"};
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < uc::command_names().size(); ++i) {
        auto* sub = app.add_subcommand(uc::command_names()[i], blurbs[i]);
        sub->add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "64-bit seed");
        sub->add_option("--threads", threads, "worker threads (0: all cores)");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--levels", levels, "box-count levels A..B");
        sub->add_option("--depth", depth, "Cantor depth P")->check(CLI::PositiveNumber);
        sub->add_option("--cell-budget", cell_budget, "cell budget for counting")->check(CLI::PositiveNumber);
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : uc::kInvalid;
    }

    CLI::App* chosen = app.get_subcommands().front();
    uc::ExperimentConfig config;
    uc::Overrides o;
    try {
        if (!config_path.empty()) config = uc::load_config(config_path);
        if (chosen->count("--seed")) o.seed = seed;
        if (chosen->count("--threads")) o.threads = threads;
        if (chosen->count("--out")) o.out = out;
        if (chosen->count("--levels")) o.levels = uc::parse_levels(levels);
        if (chosen->count("--depth")) o.depth = depth;
        if (chosen->count("--cell-budget")) o.cell_budget = cell_budget;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return uc::kInvalid;
    }
    uc::apply(config, o);
    return uc::run(chosen->get_name(), config, std::cout, std::cerr);
}
