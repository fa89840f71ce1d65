#include "qfv/cli.hpp"

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "qfv/errors.hpp"
#include "qfv/harness.hpp"

namespace qfv {

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;
    bool seed_set = false;
};

ExperimentConfig load_config(const GlobalArgs& g) {
    ExperimentConfig cfg = ExperimentConfig::from_file(g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    cfg.validate();
    return cfg;
}

void add_globals(CLI::App* cmd, GlobalArgs& g, bool need_config = true) {
    auto* opt = cmd->add_option("--config", g.config_path, "experiment config file");
    if (need_config) opt->required();
    cmd->add_option("--out", g.out_dir, "output directory (default: out)");
    cmd->add_option("--seed", g.seed, "override the config seed")
        ->each([&g](const std::string&) { g.seed_set = true; });
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"quantized fine-grained VAE prosody workbench"};
    app.require_subcommand(1);

    GlobalArgs g;
    std::string tag, resume, checkpoint, prior_checkpoint, records, corpus;
    std::vector<std::string> report_inputs;

    auto* gen = app.add_subcommand("gen-corpus", "generate train/test corpora");
    add_globals(gen, g);

    auto* train = app.add_subcommand("train", "train the stage-1 model");
    add_globals(train, g);
    train->add_option("--tag", tag, "suffix for output file names");
    train->add_option("--resume", resume, "resume from a stage-1 checkpoint");

    auto* fit = app.add_subcommand("fit-prior", "fit an AR prior to a frozen stage-1 model");
    add_globals(fit, g);
    fit->add_option("--checkpoint", checkpoint, "stage-1 checkpoint")->required();
    fit->add_option("--tag", tag, "suffix for output file names");

    auto* sample = app.add_subcommand("sample", "draw free-running samples");
    add_globals(sample, g);
    sample->add_option("--checkpoint", checkpoint, "stage-1 checkpoint")->required();
    sample->add_option("--prior-checkpoint", prior_checkpoint, "prior checkpoint (AR priors)");
    sample->add_option("--tag", tag, "suffix for output file names");

    auto* copy = app.add_subcommand("copy-synth", "reconstruct test utterances");
    add_globals(copy, g);
    copy->add_option("--checkpoint", checkpoint, "stage-1 checkpoint")->required();
    copy->add_option("--tag", tag, "suffix for output file names");

    auto* eval = app.add_subcommand("evaluate", "compute metrics for a record set");
    add_globals(eval, g);
    eval->add_option("--records", records, "sample/reconstruction records file")->required();
    eval->add_option("--corpus", corpus, "reference corpus (default: test corpus)");
    eval->add_option("--tag", tag, "suffix for output file names");

    auto* report = app.add_subcommand("report", "render metric tables");
    add_globals(report, g, /*need_config=*/false);
    report->add_option("--inputs", report_inputs, "metric record files")->required();

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) {
            cmd_gen_corpus(load_config(g), g.out_dir, std::cout);
        } else if (train->parsed()) {
            cmd_train(load_config(g), g.out_dir, tag, resume, std::cout);
        } else if (fit->parsed()) {
            cmd_fit_prior(load_config(g), g.out_dir, checkpoint, tag, std::cout);
        } else if (sample->parsed()) {
            cmd_sample(load_config(g), g.out_dir, checkpoint, prior_checkpoint, tag, std::cout);
        } else if (copy->parsed()) {
            cmd_copy_synth(load_config(g), g.out_dir, checkpoint, tag, std::cout);
        } else if (eval->parsed()) {
            ExperimentConfig cfg = load_config(g);
            std::string ref = corpus.empty()
                                  ? (std::filesystem::path(g.out_dir) / cfg.paths_corpus_test)
                                        .string()
                                  : corpus;
            cmd_evaluate(cfg, g.out_dir, records, ref, tag, std::cout);
        } else if (report->parsed()) {
            cmd_report(report_inputs, g.out_dir, std::cout);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "domain error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace qfv
