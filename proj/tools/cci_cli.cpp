// cci: command-line driver for synthesis, preprocessing, training,
// evaluation, noise stress testing and latent visualization.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cci/cci.hpp"

namespace fs = std::filesystem;
using namespace cci;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    std::string config;
    std::string out = ".";
};

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open config " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid JSON in " + path + ": " + e.what());
    }
}

fs::path out_dir(const Globals& g) {
    fs::path p(g.out);
    fs::create_directories(p);
    return p;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            v.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw Error("not a number: '" + tok + "'");
        }
    }
    return v;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Globals& g, const std::string& task_s, int n, double duration, double inverted) {
    const Task task = task_from_string(task_s);
    SynthConfig sc;
    sc.duration_s = duration;
    sc.fs_hz = task == Task::qrs ? 360.0 : 2000.0;  // typical acquisition rates; preprocessing resamples
    sc.inverted_fraction = inverted;
    sc.check();
    const auto dir = out_dir(g);
    for (int i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "%s%04d", task == Task::qrs ? "ecg" : "pcg", i);
        save_record(synth(task, sc, g.seed * 1000003ULL + static_cast<std::uint64_t>(i), id), dir);
    }
    std::cout << "wrote " << n << " records to " << dir.string() << "\n";
    return 0;
}

int cmd_preprocess(const Globals& g, const std::string& in) {
    const auto recs = load_records(in);
    if (recs.empty()) throw Error("no records in " + in);
    const auto dir = out_dir(g);
    std::vector<Episode> all;
    for (const auto& r : recs) {
        const auto pre = preprocess_record(r);
        save_record(pre, dir);
        auto eps = episodes_of(pre);
        all.insert(all.end(), eps.begin(), eps.end());
    }
    save_episodes_jsonl(all, dir / "episodes.jsonl");
    std::cout << "preprocessed " << recs.size() << " records into " << all.size() << " episodes\n";
    return 0;
}

int cmd_train(const Globals& g, const std::string& records, const std::string& mode, const std::string& attr,
              int fold_arg, int epochs) {
    TrainConfig cfg;
    if (!g.config.empty()) cfg = train_config_from_json(read_json_file(g.config));
    cfg.seed = g.seed;
    if (!mode.empty()) cfg.mode = train_mode_from_string(mode);
    if (!attr.empty()) cfg.intervention_kinds = kinds_from_attr(attr);
    if (epochs >= 0) cfg.epochs_max = epochs;
    cfg.check();

    const auto recs = load_records(records);
    if (recs.empty()) throw Error("no records in " + records);
    for (const auto& r : recs)
        if (r.task != cfg.task) throw Error("record " + r.id + " does not match the configured task");
    const auto eps = prepare_episodes(recs);
    const auto splits = kfold_split(eps, cfg.folds, cfg.seed);
    const auto dir = out_dir(g);
    {
        std::ofstream os(dir / "config.json", std::ios::trunc);
        os << to_json(cfg).dump(2) << '\n';
    }
    for (int f = 0; f < cfg.folds; ++f) {
        if (fold_arg >= 0 && f != fold_arg) continue;
        std::vector<Episode> tr, va;
        for (auto i : splits[static_cast<std::size_t>(f)].train_ids) tr.push_back(eps[i]);
        for (auto i : splits[static_cast<std::size_t>(f)].val_ids) va.push_back(eps[i]);
        std::cout << "fold " << f << ": " << tr.size() << " train / " << va.size() << " val episodes\n";
        auto res = train_model<float>(cfg, tr, va, [](const EpochRecord& r) {
            std::printf("  epoch %3d  l_seg %.5f  i_vcci %.5f  l_sim %.5f  val_acc %.4f\n", r.epoch, r.l_seg, r.i_vcci, r.l_sim,
                        r.val_metric);
            std::fflush(stdout);
        });
        const std::string tag = "fold" + std::to_string(f);
        write_history_csv(res.history, (dir / ("history_" + tag + ".csv")).string());
        save_checkpoint(res.model, {cfg.seed, config_hash(cfg), std::string(to_string(cfg.mode)), f}, dir / (tag + ".ckpt"));
        std::cout << "  best epoch " << res.best_epoch << (res.early_stopped ? " (early stop)" : "") << "\n";
    }
    return 0;
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& records) {
    const auto m = load_checkpoint<float>(ckpt);
    const auto recs = load_records(records);
    const auto res = evaluate_records(m, recs);
    std::vector<MetricsReport> rows = res.per_record;
    rows.push_back(res.aggregate);
    write_metrics_table(std::cout, rows);
    std::ofstream os(out_dir(g) / "metrics.csv", std::ios::trunc);
    write_metrics_csv(os, rows);
    return 0;
}

/// "mode=a.ckpt,b.ckpt"
ModelSet<float> parse_model_set(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("--models expects MODE=CKPT[,CKPT...], got '" + s + "'");
    ModelSet<float> set{s.substr(0, eq), {}};
    std::stringstream ss(s.substr(eq + 1));
    std::string p;
    while (std::getline(ss, p, ','))
        if (!p.empty()) set.models.push_back(load_checkpoint<float>(p));
    return set;
}

/// "gaussian_inband[:LO:HI]" or "KIND=RECORD_PATH"
dsp::NoiseSpec parse_noise(const std::string& s, Task task) {
    dsp::NoiseSpec spec;
    const auto eq = s.find('=');
    if (eq != std::string::npos) {
        spec.kind = dsp::noise_kind_from_string(s.substr(0, eq));
        const auto rec = load_record(s.substr(eq + 1));
        spec.source = std::vector<double>(rec.samples.begin(), rec.samples.end());
        spec.source_fs_hz = rec.fs_hz;
    } else {
        const auto c = s.find(':');
        spec.kind = dsp::noise_kind_from_string(s.substr(0, c));
        if (spec.kind == dsp::NoiseKind::gaussian_inband) {
            std::array<double, 2> band = task == Task::qrs ? std::array<double, 2>{0.5, 50.0} : std::array<double, 2>{25.0, 380.0};
            if (c != std::string::npos) {
                const auto v = parse_list([&] {
                    auto r = s.substr(c + 1);
                    std::replace(r.begin(), r.end(), ':', ',');
                    return r;
                }());
                if (v.size() != 2) throw Error("gaussian_inband band must be LO:HI");
                band = {v[0], v[1]};
            }
            spec.band = band;
        }
    }
    spec.check();
    return spec;
}

int cmd_nst(const Globals& g, const std::vector<std::string>& models, const std::string& records,
            const std::vector<std::string>& noises, const std::string& snr) {
    std::vector<ModelSet<float>> sets;
    for (const auto& m : models) sets.push_back(parse_model_set(m));
    const auto recs = load_records(records);
    if (recs.empty()) throw Error("no records in " + records);
    std::vector<dsp::NoiseSpec> specs;
    for (const auto& n : noises) specs.push_back(parse_noise(n, recs.front().task));
    const auto rows = run_noise_stress(sets, recs, specs, parse_list(snr), g.seed);
    const auto dir = out_dir(g);
    for (const auto& s : sets) write_nst_csv(dir / ("nst_" + s.mode + ".csv"), rows, s.mode);
    write_nst_plots(dir, rows);
    for (const auto& r : rows)
        std::printf("%-10s %-16s %6s  Er %.2f +- %.2f (n=%d)\n", r.mode.c_str(), r.noise_kind.c_str(),
                    r.snr_db ? std::to_string(static_cast<int>(*r.snr_db)).c_str() : "-", r.er_mean, r.er_std, r.n_models);
    return 0;
}

int cmd_viz(const Globals& g, const std::string& ckpt, const std::string& records, const std::string& episodes, int res) {
    const auto m = load_checkpoint<float>(ckpt);
    std::vector<Episode> eps;
    if (!episodes.empty())
        eps = load_episodes_jsonl(episodes);
    else if (!records.empty())
        eps = prepare_episodes(load_records(records));
    else
        throw Error("viz needs --records or --episodes");
    const auto groups = collect_state_frames(m, eps, m.shape.task);
    MatD all;
    for (const auto& [st, X] : groups) {
        MatD tmp(all.rows() + X.rows(), X.cols());
        if (all.rows()) tmp.topRows(all.rows()) = all;
        tmp.bottomRows(X.rows()) = X;
        all = std::move(tmp);
    }
    const auto pca = fit_pca2(all);
    const auto names = state_names(m.shape.task);
    const auto dir = out_dir(g);
    std::vector<DensityMap> maps;
    for (const auto& [st, X] : groups) {
        const auto proj = project_unit(pca, X);
        if (proj.points.rows() < 2) continue;
        auto dm = kde_scott(proj.points, res);
        const std::string name = names[static_cast<std::size_t>(st)];
        write_density_csv(dir / ("density_" + name + ".csv"), dm);
        write_density_image(dir / ("density_" + name + ".ppm"), dm);
        std::printf("%-10s n=%ld dropped=%zu h=(%.4f, %.4f)\n", name.c_str(), static_cast<long>(proj.points.rows()),
                    proj.dropped_zero, dm.h[0], dm.h[1]);
        maps.push_back(std::move(dm));
    }
    write_contact_sheet(dir / "density_sheet.ppm", maps);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive causal intervention toolkit for ECG QRS location and heart sound segmentation"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand
    Globals g;
    app.add_option("--seed", g.seed, "Seed for all randomness")->capture_default_str();
    app.add_option("--config", g.config, "JSON training configuration");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();

    std::string task = "qrs";
    int n = 10;
    double duration = 60.0, inverted = 0.0;
    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic records");
    synth_cmd->add_option("--task", task, "qrs or heartsound")->capture_default_str();
    synth_cmd->add_option("--n", n, "Number of records")->capture_default_str()->check(CLI::PositiveNumber);
    synth_cmd->add_option("--duration", duration, "Seconds per record")->capture_default_str();
    synth_cmd->add_option("--inverted", inverted, "Fraction of beats with inverted QRS")->capture_default_str();

    std::string in;
    auto* pre_cmd = app.add_subcommand("preprocess", "Apply the task pipeline and write episodes");
    pre_cmd->add_option("--in", in, "Directory of raw records")->required();

    std::string records, mode, attr;
    int fold = -1, epochs = -1;
    auto* train_cmd = app.add_subcommand("train", "Train fold models");
    train_cmd->add_option("--records", records, "Directory of raw records")->required();
    train_cmd->add_option("--mode", mode, "baseline, cci or augment")->check(CLI::IsMember({"baseline", "cci", "augment"}));
    train_cmd->add_option("--attr", attr, "am, ar or both")->check(CLI::IsMember({"am", "ar", "both"}));
    train_cmd->add_option("--fold", fold, "Train only this fold (default: all)");
    train_cmd->add_option("--epochs", epochs, "Override epochs_max");

    std::string ckpt;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on records");
    eval_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--records", records, "Directory of raw records")->required();

    std::vector<std::string> models, noises;
    std::string snr = "0,5,10,15,20,25";
    auto* nst_cmd = app.add_subcommand("nst", "Noise stress test over an SNR grid");
    nst_cmd->add_option("--models", models, "MODE=CKPT[,CKPT...] (repeatable)")->required();
    nst_cmd->add_option("--records", records, "Directory of clean raw records")->required();
    nst_cmd->add_option("--noise", noises, "gaussian_inband[:LO:HI] or KIND=RECORD (repeatable)")->required();
    nst_cmd->add_option("--snr", snr, "Comma-separated SNR grid in dB")->capture_default_str();

    std::string episodes;
    int res = 256;
    auto* viz_cmd = app.add_subcommand("viz", "Latent density maps per state");
    viz_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    viz_cmd->add_option("--records", records, "Directory of raw records");
    viz_cmd->add_option("--episodes", episodes, "episodes.jsonl from preprocess");
    viz_cmd->add_option("--resolution", res, "Grid resolution")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    try {
        if (*synth_cmd) return cmd_synth(g, task, n, duration, inverted);
        if (*pre_cmd) return cmd_preprocess(g, in);
        if (*train_cmd) return cmd_train(g, records, mode, attr, fold, epochs);
        if (*eval_cmd) return cmd_eval(g, ckpt, records);
        if (*nst_cmd) return cmd_nst(g, models, records, noises, snr);
        if (*viz_cmd) return cmd_viz(g, ckpt, records, episodes, res);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
