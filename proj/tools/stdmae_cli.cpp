// Command-line entry points: synth, pretrain, train, eval, report, run, sweep, config.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "stdmae/errors.hpp"
#include "stdmae/harness.hpp"

using namespace stdmae;

namespace {

struct ConfigFlags {
    std::string file;
    std::map<std::string, std::string> values;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", file, "key = value experiment file")->check(CLI::ExistingFile);
        for (const auto& f : config_fields()) app->add_option("--" + f.key, values[f.key], f.help)->group("Experiment");
    }

    ExperimentConfig resolve(const CLI::App* app) const {
        ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : load_config(file);
        std::vector<std::pair<std::string, std::string>> kv;
        for (const auto& f : config_fields())
            if (app->get_option("--" + f.key)->count()) kv.emplace_back(f.key, values.at(f.key));
        apply_overrides(cfg, kv);
        cfg.validate();
        return cfg;
    }
};

void log_line(const std::string& msg) { std::cerr << "[stdmae] " << msg << std::endl; }

std::vector<double> parse_ratios(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("--ratios: cannot parse '" + tok + "'");
        }
    }
    return out;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Masked spatiotemporal autoencoder pre-training and forecasting"};
    app.require_subcommand(1);

    ConfigFlags synth_flags, pretrain_flags, train_flags, eval_flags, run_flags, sweep_flags, config_flags;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic series and its mirage manifest");
    std::string spec_file, synth_out;
    synth->add_option("--spec", spec_file, "generator spec as JSON (otherwise taken from the synth.* settings)")
        ->check(CLI::ExistingFile);
    synth->add_option("-o,--out", synth_out, "output directory")->required();
    synth_flags.attach(synth);

    auto* pretrain = app.add_subcommand("pretrain", "Pre-train the encoders of the ablation mode");
    pretrain_flags.attach(pretrain);

    auto* train = app.add_subcommand("train", "Train the forecaster (and baseline) on pre-trained encoders");
    train_flags.attach(train);

    auto* eval = app.add_subcommand("eval", "Evaluate a forecaster checkpoint on one split");
    std::string split = "test", checkpoint;
    eval->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--checkpoint", checkpoint, "forecaster checkpoint (default: the run's)");
    eval_flags.attach(eval);

    auto* report = app.add_subcommand("report", "Write plot-ready overlay and curve CSVs for a run");
    std::string run_dir;
    report->add_option("run_dir", run_dir, "run directory")->required();

    auto* run = app.add_subcommand("run", "pretrain, train, eval on test and report in one go");
    run_flags.attach(run);

    auto* sweep = app.add_subcommand("sweep", "Compare masking ratios on the configured dataset");
    std::string ratios = "0.25,0.5,0.75";
    sweep->add_option("--ratios", ratios, "comma-separated masking ratios");
    sweep_flags.attach(sweep);

    auto* config = app.add_subcommand("config", "Print the resolved configuration with every default");
    config_flags.attach(config);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (*synth) {
        SynthSpec spec;
        if (!spec_file.empty()) {
            std::ifstream in(spec_file);
            try {
                spec = nlohmann::json::parse(in).get<SynthSpec>();
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(spec_file + ": " + e.what());
            }
        } else {
            spec = synth_flags.resolve(synth).synth_spec();
        }
        cmd_synth(spec, synth_out);
        log_line("wrote " + synth_out + "/series.bin and manifest.csv");
    } else if (*pretrain) {
        const auto s = cmd_pretrain(pretrain_flags.resolve(pretrain), log_line);
        std::cout << strip_timings(s)["encoders"].size() << " encoder(s) pre-trained\n";
    } else if (*train) {
        const auto r = cmd_train(train_flags.resolve(train), log_line);
        if (r.contains("comparison")) std::cout << r["comparison"].dump(2) << "\n";
        if (r.contains("mirage")) std::cout << "mirage: " << r["mirage"].dump() << "\n";
    } else if (*eval) {
        const auto r = cmd_eval(eval_flags.resolve(eval), parse_split_name(split),
                                checkpoint.empty() ? std::nullopt : std::optional<std::filesystem::path>(checkpoint),
                                log_line);
        std::cout << r["metrics"].dump(2) << "\n";
    } else if (*report) {
        for (const auto& f : cmd_report(run_dir, log_line)) std::cout << f.string() << "\n";
    } else if (*run) {
        const auto r = cmd_run(run_flags.resolve(run), log_line);
        std::cout << r["eval"]["metrics"]["overall"].dump(2) << "\n";
    } else if (*sweep) {
        const auto rows = cmd_sweep(sweep_flags.resolve(sweep), parse_ratios(ratios), log_line);
        std::cout << sweep_table(rows);
    } else if (*config) {
        std::cout << dump_config(config_flags.resolve(config));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "numerical divergence: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
