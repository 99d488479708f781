#pragma once

// Command-line entry points. cli_dispatch parses argv with CLI11 and runs
// one subcommand; JSON results go to `out`, progress and errors to `err`.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <dugm/metrics.hpp>
#include <dugm/service.hpp>
#include <dugm/train.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace dugm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr std::uint32_t kFixtureSize = 64;

/// Root for fixtures, models and sessions: $DUG_DATA_DIR or ./dug_data.
inline std::filesystem::path data_dir() {
    const char* env = std::getenv("DUG_DATA_DIR");
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("dug_data");
}

inline std::filesystem::path default_stage1() { return data_dir() / "models" / "stage1"; }
inline std::filesystem::path default_stage2() { return data_dir() / "models" / "stage2"; }
inline std::filesystem::path default_cubic() { return data_dir() / "models" / "cubic"; }

namespace detail {

inline std::string zero_pad(std::size_t v, int width) {
    std::ostringstream s;
    s << std::setw(width) << std::setfill('0') << v;
    return s.str();
}

struct InputPair {
    Raster image;
    std::optional<Raster> gt;
};

/// --image/--gt FRAS files when given, else the toy composite for `seed`.
inline InputPair resolve_inputs(const std::string& image, const std::string& gt, std::uint64_t seed) {
    if (image.empty()) {
        if (!gt.empty()) throw UsageError("--gt needs --image");
        MattingSample s = gen_composite(kFixtureSize, seed, 0);
        return {std::move(s.image), std::move(s.alpha)};
    }
    InputPair p{load_fras(image), std::nullopt};
    if (!gt.empty()) {
        p.gt = load_fras(gt);
        require_same_extent(p.image, *p.gt, "inputs");
    }
    return p;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_file(path, j.dump(2) + "\n");
}

inline ToyModel load_matting_model(const std::filesystem::path& prefix) {
    ToyModel m = load_model(prefix);
    if (m.kind != ModelKind::Matting) throw UsageError(prefix.string() + " is not a matting model");
    return m;
}

inline Predictor model_predictor(const ToyModel& m) {
    return [&m](const Raster& image, const Raster& user_map) { return forward(m, image, user_map); };
}

inline nlohmann::json label_counts(const std::vector<LabelledProposal>& labels) {
    nlohmann::json j{{"fg", 0}, {"bg", 0}, {"transition", 0}};
    for (const auto& l : labels) j[std::string(label_name(l.label))] = j[std::string(label_name(l.label))].get<int>() + 1;
    return j;
}

inline nlohmann::json round_json(const InteractionSession& s) {
    nlohmann::json j{{"round", s.round},
                     {"mean_epistemic", mean_of(uncertainty_maps(s.fused).epistemic)},
                     {"proposals", s.proposals.size()}};
    if (s.gt_alpha) j["sad"] = error_metrics(s.fused.gamma, *s.gt_alpha).sad;
    return j;
}

inline StepCallback progress(std::ostream& err, std::size_t every) {
    return [&err, every](std::size_t step, double loss) {
        if (step % every == 0) err << "step " << step << " loss " << loss << "\n";
    };
}

inline std::vector<double> calibration_levels() {
    std::vector<double> levels;
    for (int i = 0; i <= 20; ++i) levels.push_back(i / 20.0);
    return levels;
}

} // namespace detail

struct CliOptions {
    std::uint64_t seed = 1;
    std::size_t rounds = 3;
    std::uint32_t k_grid = InteractionConfig{}.grid;
    std::size_t top_n = InteractionConfig{}.top_n;
    double threshold_scale = InteractionConfig{}.threshold_scale;
    double lambda = kDefaultLambda;
    std::string checkpoint, refiner, out_dir;
    std::string image, gt, trimap, pred, session, user_map;
    std::string kind;
    std::size_t n = 0, steps = 0;
    int port = 8080;
    std::string host = "127.0.0.1";
    bool oracle = false, serve = false;

    InteractionConfig interaction() const { return {k_grid, top_n, threshold_scale}; }
    std::filesystem::path out_or(const std::filesystem::path& fallback) const {
        return out_dir.empty() ? fallback : std::filesystem::path(out_dir);
    }
};

inline int run_gen_data(const CliOptions& o, std::ostream& out) {
    const auto dir = o.out_or(data_dir() / "fixtures");
    std::filesystem::create_directories(dir);
    nlohmann::json report{{"kind", o.kind}, {"seed", o.seed}, {"files", nlohmann::json::array()}};
    if (o.kind == "cubic") {
        const CubicDataset d = gen_cubic(o.n ? o.n : 1000, -4.0, 4.0, 3.0, o.seed);
        std::ostringstream csv;
        csv << std::setprecision(17) << "x,y_raw,y\n";
        for (std::size_t i = 0; i < d.x.size(); ++i) csv << d.x[i] << ',' << d.y_raw[i] << ',' << d.y[i] << '\n';
        detail::write_file(dir / "cubic.csv", csv.str());
        report["files"].push_back("cubic.csv");
        report["transform"] = {{"scale", d.transform.scale}, {"offset", d.transform.offset}};
    } else {
        const std::size_t n = o.n ? o.n : 8;
        for (std::size_t i = 0; i < n; ++i) {
            const MattingSample s = gen_composite(kFixtureSize, o.seed, i);
            const std::string stem = "composite_" + detail::zero_pad(i, 3);
            const std::pair<const char*, const Raster*> parts[] = {
                {"image", &s.image}, {"alpha", &s.alpha}, {"fg", &s.foreground}, {"bg", &s.background}};
            for (const auto& [name, raster] : parts) {
                save_fras(*raster, dir / (stem + "_" + name + ".fras"));
                report["files"].push_back(stem + "_" + name + ".fras");
            }
            save_png8(s.image, dir / (stem + "_image.png"));
            save_png8(s.alpha, dir / (stem + "_alpha.png"));
        }
    }
    detail::write_json(dir / "manifest.json", report);
    out << report.dump(2) << "\n";
    return kExitOk;
}

inline int run_train_stage1(const CliOptions& o, std::ostream& out, std::ostream& err) {
    nlohmann::json report{{"kind", o.kind}, {"seed", o.seed}, {"lambda", o.lambda}};
    double last_loss = 0.0;
    if (o.kind == "cubic") {
        CubicConfig cfg;
        cfg.seed = o.seed;
        cfg.lambda = o.lambda;
        if (o.steps) cfg.steps = o.steps;
        auto log = detail::progress(err, 500);
        cfg.on_step = [&](std::size_t s, double l) {
            last_loss = l;
            log(s, l);
        };
        const CubicDataset data = gen_cubic(o.n ? o.n : 1000, -4.0, 4.0, 3.0, o.seed);
        const ToyModel m = train_stage1_cubic(cfg, data);
        const auto prefix = o.checkpoint.empty() ? default_cubic() : std::filesystem::path(o.checkpoint);
        save_model(m, prefix);
        report["steps"] = cfg.steps;
        report["checkpoint"] = prefix.string();
        report["param_checksum"] = param_checksum(m.theta);
    } else {
        Stage1Config cfg;
        cfg.seed = o.seed;
        cfg.lambda = o.lambda;
        if (o.steps) cfg.steps = o.steps;
        auto log = detail::progress(err, 100);
        cfg.on_step = [&](std::size_t s, double l) {
            last_loss = l;
            log(s, l);
        };
        const ToyModel m = train_stage1(cfg);
        const auto prefix = o.checkpoint.empty() ? default_stage1() : std::filesystem::path(o.checkpoint);
        save_model(m, prefix);
        report["steps"] = cfg.steps;
        report["checkpoint"] = prefix.string();
        report["param_checksum"] = param_checksum(m.theta);
    }
    report["final_loss"] = last_loss;
    out << report.dump(2) << "\n";
    return kExitOk;
}

inline int run_train_stage2(const CliOptions& o, std::ostream& out, std::ostream& err) {
    const auto stage1 = o.checkpoint.empty() ? default_stage1() : std::filesystem::path(o.checkpoint);
    const ToyModel m = detail::load_matting_model(stage1);
    const std::uint64_t before = param_checksum(m.theta);
    Stage2Config cfg;
    cfg.seed = o.seed;
    if (o.steps) cfg.steps = o.steps;
    double last_loss = 0.0;
    auto log = detail::progress(err, 100);
    cfg.on_step = [&](std::size_t s, double l) {
        last_loss = l;
        log(s, l);
    };
    const Refiner r = train_stage2(cfg, m);
    if (param_checksum(m.theta) != before) throw TrainingError("stage 2 modified the frozen stage-1 parameters");
    const auto prefix = o.refiner.empty() ? default_stage2() : std::filesystem::path(o.refiner);
    save_refiner(r, prefix);
    out << nlohmann::json{{"stage1", stage1.string()},
                          {"refiner", prefix.string()},
                          {"steps", cfg.steps},
                          {"seed", o.seed},
                          {"final_loss", last_loss},
                          {"stage1_checksum", before}}
                   .dump(2)
        << "\n";
    return kExitOk;
}

inline int run_predict(const CliOptions& o, std::ostream& out) {
    const ToyModel m = detail::load_matting_model(o.checkpoint.empty() ? default_stage1()
                                                                            : std::filesystem::path(o.checkpoint));
    const detail::InputPair in = detail::resolve_inputs(o.image, o.gt, o.seed);
    const Raster user_map =
        o.user_map.empty() ? Raster(in.image.width, in.image.height, 1, kCodeUnknown) : load_fras(o.user_map);
    const NIGMap map = forward(m, in.image, user_map);
    const UncertaintyMaps u = uncertainty_maps(map);

    const auto dir = o.out_or(data_dir() / "predict");
    std::filesystem::create_directories(dir);
    nlohmann::json report{{"map", save_nig_map(map, dir, "nig")}};
    save_fras(u.aleatoric, dir / "aleatoric.fras");
    save_fras(u.epistemic, dir / "epistemic.fras");
    save_png8(map.gamma, dir / "matte.png");
    save_png8(normalize_for_display(u.epistemic), dir / "epistemic.png");
    save_png8(normalize_for_display(u.aleatoric), dir / "aleatoric.png");
    report["mean_aleatoric"] = mean_of(u.aleatoric);
    report["mean_epistemic"] = mean_of(u.epistemic);
    report["infinite_variance_fraction"] =
        double(std::count_if(u.var_sigma2.data.begin(), u.var_sigma2.data.end(), [](float v) { return std::isinf(v); })) /
        double(u.var_sigma2.data.size());
    if (in.gt) report["metrics"] = report_json(evaluate(map.gamma, *in.gt, trimap_from_alpha(*in.gt)));
    detail::write_json(dir / "report.json", report);
    out << report.dump(2) << "\n";
    return kExitOk;
}

inline int run_interact(const CliOptions& o, std::ostream& out, std::ostream& err) {
    if (o.oracle == o.serve) throw UsageError("interact needs exactly one of --oracle or --serve");
    const ToyModel m = detail::load_matting_model(o.checkpoint.empty() ? default_stage1()
                                                                            : std::filesystem::path(o.checkpoint));
    detail::InputPair in = detail::resolve_inputs(o.image, o.gt, o.seed);
    const Predictor predict = detail::model_predictor(m);
    InteractionSession s = start_session(std::move(in.image), std::move(in.gt), predict, o.interaction());

    if (o.serve) {
        SessionService service(std::move(s), predict, "seed" + std::to_string(o.seed));
        httplib::Server server;
        err << "serving on http://" << o.host << ":" << o.port << "\n";
        if (!serve(server, service, o.host, o.port)) throw DomainError("could not listen on " + o.host + ":" +
                                                                       std::to_string(o.port));
        return kExitOk;
    }

    if (!s.gt_alpha) throw UsageError("interact --oracle needs ground truth (--gt or the seeded fixture)");
    nlohmann::json report{{"seed", o.seed},
                          {"config", {{"k_grid", o.k_grid}, {"top_n", o.top_n}, {"threshold_scale", o.threshold_scale}}},
                          {"rounds", nlohmann::json::array({detail::round_json(s)})}};
    for (std::size_t r = 0; r < o.rounds; ++r) {
        const auto labels = oracle_labels(s);
        s = run_round(std::move(s), predict, labels);
        nlohmann::json j = detail::round_json(s);
        j["labels"] = detail::label_counts(labels);
        report["rounds"].push_back(j);
    }
    report["pre_sad"] = report["rounds"].front()["sad"];
    report["post_sad"] = report["rounds"].back()["sad"];

    const auto dir = o.out_or(data_dir() / "sessions" / ("seed" + std::to_string(o.seed)));
    save_session(s, dir);
    save_png8(s.fused.gamma, dir / "matte.png");
    detail::write_json(dir / "report.json", report);
    out << report.dump(2) << "\n";
    return kExitOk;
}

inline int run_refine(const CliOptions& o, std::ostream& out) {
    const Refiner refiner = load_refiner(o.refiner.empty() ? default_stage2() : std::filesystem::path(o.refiner));
    InteractionSession s;
    if (!o.session.empty()) {
        s = load_session(o.session);
    } else {
        const ToyModel m = detail::load_matting_model(o.checkpoint.empty() ? default_stage1()
                                                                            : std::filesystem::path(o.checkpoint));
        detail::InputPair in = detail::resolve_inputs(o.image, o.gt, o.seed);
        const Predictor predict = detail::model_predictor(m);
        s = start_session(std::move(in.image), std::move(in.gt), predict, o.interaction());
        if (o.rounds > 0 && !s.gt_alpha) throw UsageError("oracle rounds before refinement need ground truth");
        for (std::size_t r = 0; r < o.rounds; ++r) s = run_round(std::move(s), predict, oracle_labels(s));
    }
    const RefineResult res = refine_prediction(s.fused, s.image, refiner, o.seed);

    const auto dir = o.out_or(data_dir() / "refine");
    std::filesystem::create_directories(dir);
    save_fras(res.coarse, dir / "coarse.fras");
    save_fras(res.mask, dir / "mask.fras");
    save_fras(res.refined, dir / "refined.fras");
    save_png8(res.coarse, dir / "coarse.png");
    save_png8(res.refined, dir / "refined.png");
    nlohmann::json report{{"round", s.round},
                          {"seed", o.seed},
                          {"degenerate", res.degenerate},
                          {"selected", std::count(res.mask.data.begin(), res.mask.data.end(), 1.0f)},
                          {"windows", decimate_selection(res.mask).size()}};
    if (s.gt_alpha) {
        const Raster trimap = trimap_from_alpha(*s.gt_alpha);
        report["coarse"] = report_json(evaluate(res.coarse, *s.gt_alpha, trimap));
        report["refined"] = report_json(evaluate(res.refined, *s.gt_alpha, trimap));
    }
    detail::write_json(dir / "report.json", report);
    out << report.dump(2) << "\n";
    return kExitOk;
}

inline int run_eval(const CliOptions& o, std::ostream& out) {
    if (o.pred.empty() || o.gt.empty()) throw UsageError("eval needs --pred and --gt");
    const Raster pred = load_fras(o.pred);
    const Raster gt = load_fras(o.gt);
    const Raster trimap = o.trimap.empty() ? trimap_from_alpha(gt) : load_fras(o.trimap);
    out << report_json(evaluate(pred, gt, trimap)).dump(2) << "\n";
    return kExitOk;
}

inline int run_calib(const CliOptions& o, std::ostream& out) {
    const auto prefix = o.checkpoint.empty() ? default_stage1() : std::filesystem::path(o.checkpoint);
    const ToyModel m = load_model(prefix);
    const auto levels = detail::calibration_levels();
    CalibrationCurve c;
    if (m.kind == ModelKind::Cubic) {
        const CubicDataset test = gen_cubic(o.n ? o.n : 2000, -4.0, 4.0, 3.0, o.seed, m.target_transform);
        c = calibration(predict_points(m, test.x), test.y, levels);
    } else {
        std::vector<NIGParams> params;
        std::vector<double> targets;
        for (std::size_t i = 0; i < (o.n ? o.n : 8); ++i) {
            const MattingSample s = gen_composite(kFixtureSize, o.seed, i);
            const NIGMap map = forward(m, s.image, Raster(s.image.width, s.image.height, 1, kCodeUnknown));
            for (std::size_t p = 0; p < map.pixels(); ++p) {
                params.push_back(map.at(p));
                targets.push_back(s.alpha.data[p]);
            }
        }
        c = calibration(params, targets, levels);
    }
    out << nlohmann::json{{"model", std::string(kind_name(m.kind))},
                          {"levels", c.levels},
                          {"coverage", c.coverage},
                          {"max_deviation", c.max_deviation()}}
                   .dump(2)
        << "\n";
    return kExitOk;
}

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CliOptions o;
    CLI::App app{"Evidential interactive matting toolkit", "dugm"};
    app.require_subcommand(1, 1);

    const auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed / fixture index"); };
    const auto out_dir = [&](CLI::App* c) { c->add_option("--out-dir", o.out_dir, "output directory"); };
    const auto checkpoint = [&](CLI::App* c) {
        c->add_option("--checkpoint", o.checkpoint, "stage-1 checkpoint prefix (default $DUG_DATA_DIR/models/stage1)");
    };
    const auto interaction = [&](CLI::App* c) {
        c->add_option("--rounds", o.rounds, "oracle rounds");
        c->add_option("--k-grid", o.k_grid, "K: proposal grid is K x K")->check(CLI::Range(1u, 4096u));
        c->add_option("--top-n", o.top_n, "N: proposals per round")->check(CLI::Range(std::size_t(1), std::size_t(1) << 20));
        c->add_option("--threshold-scale", o.threshold_scale, "t = scale * mean cell epistemic uncertainty")
            ->check(CLI::NonNegativeNumber);
    };
    const auto inputs = [&](CLI::App* c) {
        c->add_option("--image", o.image, "input image (FRAS); default: toy composite for --seed");
        c->add_option("--gt", o.gt, "ground-truth alpha (FRAS)");
    };

    auto* gen = app.add_subcommand("gen-data", "write toy composites or the cubic dataset");
    gen->add_option("--kind", o.kind, "composites | cubic")->check(CLI::IsMember({"composites", "cubic"}));
    gen->add_option("--n", o.n, "number of samples");
    seed(gen);
    out_dir(gen);

    auto* t1 = app.add_subcommand("train-stage1", "train the evidential model");
    t1->add_option("--kind", o.kind, "matting | cubic")->check(CLI::IsMember({"matting", "cubic"}));
    t1->add_option("--steps", o.steps, "optimizer steps");
    t1->add_option("--n", o.n, "cubic training points");
    t1->add_option("--lambda", o.lambda, "evidence regularizer weight")->check(CLI::NonNegativeNumber);
    seed(t1);
    t1->add_option("--checkpoint", o.checkpoint, "output checkpoint prefix");

    auto* t2 = app.add_subcommand("train-stage2", "train the refiner with the stage-1 model frozen");
    t2->add_option("--steps", o.steps, "optimizer steps");
    seed(t2);
    checkpoint(t2);
    t2->add_option("--refiner", o.refiner, "output refiner prefix (default $DUG_DATA_DIR/models/stage2)");

    auto* pr = app.add_subcommand("predict", "run the model once and write NIG and uncertainty maps");
    checkpoint(pr);
    inputs(pr);
    pr->add_option("--user-map", o.user_map, "user map (FRAS); default empty");
    seed(pr);
    out_dir(pr);

    auto* it = app.add_subcommand("interact", "run an interaction session");
    auto* oracle_flag = it->add_flag("--oracle", o.oracle, "label proposals from ground truth");
    auto* serve_flag = it->add_flag("--serve", o.serve, "serve the session over HTTP");
    oracle_flag->excludes(serve_flag);
    it->add_option("--port", o.port, "HTTP port")->check(CLI::Range(0, 65535));
    it->add_option("--host", o.host, "HTTP bind address");
    checkpoint(it);
    inputs(it);
    interaction(it);
    seed(it);
    out_dir(it);

    auto* rf = app.add_subcommand("refine", "refine a fused matte with the stage-2 refiner");
    checkpoint(rf);
    rf->add_option("--refiner", o.refiner, "refiner prefix (default $DUG_DATA_DIR/models/stage2)");
    rf->add_option("--session", o.session, "session directory written by interact --oracle");
    inputs(rf);
    interaction(rf);
    seed(rf);
    out_dir(rf);

    auto* ev = app.add_subcommand("eval", "matting metrics of a prediction against ground truth");
    ev->add_option("--pred", o.pred, "predicted alpha (FRAS)")->required();
    ev->add_option("--gt", o.gt, "ground-truth alpha (FRAS)")->required();
    ev->add_option("--trimap", o.trimap, "trimap (FRAS, codes 1 / -1 / 0.5); default derived from --gt");

    auto* ca = app.add_subcommand("calib", "calibration curve of a trained model");
    checkpoint(ca);
    ca->add_option("--n", o.n, "test points (cubic) or composites (matting)");
    seed(ca);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
    if (o.kind.empty()) o.kind = gen->parsed() ? "composites" : "matting";
    if (rf->parsed() && rf->count("--rounds") == 0) o.rounds = 1;

    try {
        if (gen->parsed()) return run_gen_data(o, out);
        if (t1->parsed()) return run_train_stage1(o, out, err);
        if (t2->parsed()) return run_train_stage2(o, out, err);
        if (pr->parsed()) return run_predict(o, out);
        if (it->parsed()) return run_interact(o, out, err);
        if (rf->parsed()) return run_refine(o, out);
        if (ev->parsed()) return run_eval(o, out);
        if (ca->parsed()) return run_calib(o, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace dugm
