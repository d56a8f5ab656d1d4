// pour: command-line front end for the POUR-Net pipeline. Each subcommand is a
// thin wrapper over one library operation; exit codes are 0 (success),
// 1 (runtime failure), 2 (bad arguments or invalid configuration).

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pour/cascade.hpp"
#include "pour/metrics.hpp"
#include "pour/phantom.hpp"
#include "pour/ppgm.hpp"
#include "pour/runconfig.hpp"

namespace fs = std::filesystem;
using namespace pour;

namespace {

struct UsageFailure : Error {
    using Error::Error;
};

std::string frac_tag(double f) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", f);
    return buf;
}

std::vector<double> parse_fractions(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        const std::string item = csv.substr(pos, comma - pos);
        if (!item.empty()) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(item, &used);
            } catch (const std::exception&) {
                throw UsageFailure("invalid count fraction '" + item + "'");
            }
            if (used != item.size() || !(v > 0.0) || v > 1.0)
                throw UsageFailure("invalid count fraction '" + item + "' (need 0 < f <= 1)");
            out.push_back(v);
        }
        pos = comma + 1;
    }
    if (out.empty()) throw UsageFailure("no count fractions given");
    return out;
}

Volume3D load_normalized(const fs::path& path, bool activity_channel) {
    Volume3D v = read_volume(path);
    switch (v.kind) {
        case VolumeKind::mu:
            if (activity_channel)
                throw ContractError(path.string() + ": expected an activity volume, found " +
                                    kind_name(v.kind));
            return normalize_mu(v);
        case VolumeKind::activity:
            if (!activity_channel)
                throw ContractError(path.string() + ": expected an attenuation volume, found " +
                                    kind_name(v.kind));
            return normalize_activity(v);
        case VolumeKind::mu_normalized:
            if (activity_channel)
                throw ContractError(path.string() + ": expected an activity volume, found " +
                                    kind_name(v.kind));
            return v;
        case VolumeKind::activity_normalized:
            if (!activity_channel)
                throw ContractError(path.string() + ": expected an attenuation volume, found " +
                                    kind_name(v.kind));
            return v;
    }
    throw FormatError(path.string() + ": unknown volume kind");
}

OurNet load_model(const fs::path& path, const OurNetConfig& tmpl, int in_channels) {
    OurNetConfig cfg = tmpl;
    cfg.in_channels = in_channels;
    OurNet net = make_ournet<float>(cfg, 0);  // weights replaced by the checkpoint
    restore_checkpoint(path, net.named);
    return net;
}

// ---- phantom ----------------------------------------------------------------

struct PhantomArgs {
    std::string out_dir;
    int count = 16;
    std::string fractions = "0.1,0.025";
    int atlas_count = 0;
};

int cmd_phantom(const PhantomArgs& a, const RunConfig& rc) {
    const std::vector<double> fracs = parse_fractions(a.fractions);
    if (a.count < 1) throw UsageFailure("--count must be >= 1");
    PhantomSpec spec = rc.phantom;
    spec.validate();

    fs::create_directories(a.out_dir);
    std::vector<TrainingManifest> manifests(fracs.size());
    for (int i = 0; i < a.count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "case_%03d", i);
        const fs::path case_dir = fs::path(a.out_dir) / name;
        fs::create_directories(case_dir);

        PhantomSpec ps = spec;
        ps.seed = substream_seed(rc.seed, "case" + std::to_string(i));
        auto [mu_gt, lambda_gt] = generate_phantom(ps);
        write_volume(mu_gt, case_dir / "mu_gt.vvol");
        write_volume(lambda_gt, case_dir / "lambda_gt.vvol");

        // split by position, 12/2/4 at the default 18-case scale
        const int n_val = int(std::lround(a.count / 9.0));
        const int n_test = int(std::lround(a.count * 2 / 9.0));
        const int n_train = a.count - n_val - n_test;
        const std::string split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";

        for (std::size_t fi = 0; fi < fracs.size(); ++fi) {
            DegradeParams dp = rc.degrade;
            dp.count_fraction = fracs[fi];
            dp.seed = substream_seed(rc.seed,
                                     "degrade" + std::to_string(i) + "@" + frac_tag(fracs[fi]));
            auto [lambda_mlaa, mu_mlaa] = degrade(mu_gt, lambda_gt, dp);
            const std::string tag = frac_tag(fracs[fi]);
            write_volume(lambda_mlaa, case_dir / ("lambda_mlaa_f" + tag + ".vvol"));
            write_volume(mu_mlaa, case_dir / ("mu_mlaa_f" + tag + ".vvol"));
            manifests[fi].cases.push_back({fs::path(name) / ("lambda_mlaa_f" + tag + ".vvol"),
                                           fs::path(name) / ("mu_mlaa_f" + tag + ".vvol"),
                                           fs::path(name) / "mu_gt.vvol", split});
        }
    }
    for (std::size_t fi = 0; fi < fracs.size(); ++fi)
        write_manifest(manifests[fi],
                       fs::path(a.out_dir) / ("manifest_f" + frac_tag(fracs[fi]) + ".tsv"));

    if (a.atlas_count > 0) {
        const fs::path atlas_dir = fs::path(a.out_dir) / "atlas";
        fs::create_directories(atlas_dir);
        AtlasDataset atlas = generate_atlas(a.atlas_count, spec, rc.seed);
        for (const auto& e : atlas.entries) {
            Volume3D raw = denormalize_mu(e.volume);
            write_volume(raw, atlas_dir / (e.id + ".vvol"));
        }
    }
    std::printf("wrote %d cases, %zu manifest(s)%s under %s\n", a.count, fracs.size(),
                a.atlas_count > 0 ? ", atlas" : "", a.out_dir.c_str());
    return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string manifest;
    int stage = 1;
    std::string out;
    std::string log;
    std::string priors_dir;
};

std::vector<Volume3D> load_prior_files(const fs::path& dir, std::size_t count) {
    std::vector<Volume3D> priors;
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "prior_%03zu.vvol", i);
        priors.push_back(load_normalized(dir / name, false));
    }
    return priors;
}

int cmd_train(const TrainArgs& a, const RunConfig& rc) {
    if (a.stage < 1) throw UsageFailure("--stage must be >= 1");
    TrainingManifest manifest = read_manifest(a.manifest);
    const auto train_idx = manifest.indices_of("train");
    if (train_idx.empty()) throw ContractError("manifest has no train cases");

    std::vector<LoadedCase> cases;
    for (std::size_t idx : train_idx) cases.push_back(load_case(manifest.cases[idx]));

    std::optional<std::vector<Volume3D>> priors;
    if (a.stage >= 2) {
        if (a.priors_dir.empty())
            throw UsageFailure("--priors is required for stage >= 2 training");
        priors = load_prior_files(a.priors_dir, cases.size());
    } else if (!a.priors_dir.empty()) {
        throw UsageFailure("--priors only applies to stage >= 2");
    }

    TrainResult res = train_stage(a.stage, cases, priors ? &*priors : nullptr, rc.cascade);
    const std::string out = a.out.empty() ? "stage" + std::to_string(a.stage) + ".pour" : a.out;
    save_checkpoint(out, res.net.named);
    if (!a.log.empty()) write_training_log(res.losses, a.log);
    std::printf("stage %d: %zu steps, loss %.6f -> %.6f, checkpoint %s\n", a.stage,
                res.losses.size(), double(res.losses.front()), double(res.losses.back()),
                out.c_str());
    return 0;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
    std::string model, lambda, mu_mlaa, prior, out;
    int patch = 0, stride = 0;
};

int cmd_infer(const InferArgs& a, const RunConfig& rc) {
    Volume3D lambda = load_normalized(a.lambda, true);
    Volume3D mu_mlaa = load_normalized(a.mu_mlaa, false);
    std::optional<Volume3D> prior;
    if (!a.prior.empty()) prior = load_normalized(a.prior, false);

    OurNet net = load_model(a.model, rc.cascade.ournet, prior ? 3 : 2);
    Volume3D x_f;
    if (a.patch > 0)
        x_f = infer_volume_patched(lambda, mu_mlaa, prior ? &*prior : nullptr, net, a.patch,
                                   a.stride > 0 ? a.stride : a.patch);
    else
        x_f = infer_volume(lambda, mu_mlaa, prior ? &*prior : nullptr, net);
    write_volume(denormalize_mu(x_f), a.out);
    std::printf("wrote %s\n", a.out.c_str());
    return 0;
}

// ---- match / register -------------------------------------------------------

int cmd_match(const std::string& atlas_dir, const std::string& query, int presample) {
    AtlasDataset atlas = load_atlas_dir(atlas_dir);
    Volume3D q = load_normalized(query, false);
    auto [index, mse] = atlas_match(q, atlas, presample);
    std::printf("matched_index=%zu\tmatched_mse=%.9g\tmatched_id=%s\n", index, mse,
                atlas.entries[index].id.c_str());
    return 0;
}

int cmd_register(const std::string& fixed_path, const std::string& moving_path,
                 const std::string& out, const RunConfig& rc) {
    Volume3D fixed = load_normalized(fixed_path, false);
    Volume3D moving = load_normalized(moving_path, false);
    const double before = rmse(fixed, moving);
    auto [field, warped] = demons_register(fixed, moving, rc.cascade.demons);
    const double after = rmse(fixed, warped);
    if (!out.empty()) write_volume(denormalize_mu(warped), out);
    std::printf("rmse_before=%.9g\trmse_after=%.9g\tjacobian_positive_fraction=%.6f\n", before,
                after, jacobian_positive_fraction(field));
    return 0;
}

// ---- cascade ----------------------------------------------------------------

struct CascadeRunArgs {
    std::string lambda, mu_mlaa, atlas_dir, stages_dir, out;
    std::string stage_out_dir;
    int stages = 0;  // 0: use config n_cascades
};

int cmd_cascade_run(const CascadeRunArgs& a, const RunConfig& rc) {
    CascadeConfig cc = rc.cascade;
    if (a.stages > 0) cc.n_cascades = a.stages;
    cc.validate();

    Volume3D lambda = load_normalized(a.lambda, true);
    Volume3D mu_mlaa = load_normalized(a.mu_mlaa, false);

    std::vector<OurNet> nets;
    std::vector<const OurNet*> stages;
    for (int k = 1; k <= cc.n_cascades; ++k) {
        const fs::path ckpt = fs::path(a.stages_dir) / ("stage" + std::to_string(k) + ".pour");
        nets.push_back(load_model(ckpt, cc.ournet, k == 1 ? 2 : 3));
    }
    for (const auto& n : nets) stages.push_back(&n);

    AtlasDataset atlas;
    if (cc.n_cascades > 1) atlas = load_atlas_dir(a.atlas_dir);

    PourResult res = run_pour(lambda, mu_mlaa, stages, atlas, cc);
    write_volume(denormalize_mu(res.final), a.out);
    if (!a.stage_out_dir.empty()) {
        fs::create_directories(a.stage_out_dir);
        for (std::size_t k = 0; k < res.stage_outputs.size(); ++k)
            write_volume(denormalize_mu(res.stage_outputs[k]),
                         fs::path(a.stage_out_dir) / ("stage" + std::to_string(k + 1) + ".vvol"));
    }
    for (std::size_t i = 0; i < res.reports.size(); ++i)
        std::printf("# prior %zu\n%s", i + 1, res.reports[i].to_text().c_str());
    std::printf("wrote %s\n", a.out.c_str());
    return 0;
}

struct CascadeTrainArgs {
    std::string manifest, atlas_dir, out_dir;
};

int cmd_cascade_train(const CascadeTrainArgs& a, const RunConfig& rc) {
    CascadeConfig cc = rc.cascade;
    cc.validate();
    TrainingManifest manifest = read_manifest(a.manifest);
    const auto train_idx = manifest.indices_of("train");
    if (train_idx.empty()) throw ContractError("manifest has no train cases");
    std::vector<LoadedCase> cases;
    for (std::size_t idx : train_idx) cases.push_back(load_case(manifest.cases[idx]));

    AtlasDataset atlas;
    if (cc.n_cascades > 1) atlas = load_atlas_dir(a.atlas_dir);

    fs::create_directories(a.out_dir);
    std::vector<Volume3D> priors;
    std::vector<OurNet> frozen;
    for (int stage = 1; stage <= cc.n_cascades; ++stage) {
        TrainResult res = train_stage(stage, cases, stage >= 2 ? &priors : nullptr, cc);
        const fs::path ckpt = fs::path(a.out_dir) / ("stage" + std::to_string(stage) + ".pour");
        save_checkpoint(ckpt, res.net.named);
        write_training_log(res.losses,
                           fs::path(a.out_dir) / ("stage" + std::to_string(stage) + ".log"));
        std::printf("stage %d: %zu steps, loss %.6f -> %.6f, checkpoint %s\n", stage,
                    res.losses.size(), double(res.losses.front()), double(res.losses.back()),
                    ckpt.string().c_str());
        frozen.push_back(std::move(res.net));
        if (stage == cc.n_cascades) break;

        // priors for the next stage: frozen-model inference + prior generation
        const fs::path prior_dir = fs::path(a.out_dir) / ("priors_stage" + std::to_string(stage + 1));
        fs::create_directories(prior_dir);
        std::vector<Volume3D> next_priors;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            Volume3D x = infer_volume(cases[i].lambda, cases[i].mu_mlaa,
                                      stage == 1 ? nullptr : &priors[i], frozen.back());
            PriorResult pr = generate_prior(x, atlas, cc.demons, cc.match_presample);
            char name[32];
            std::snprintf(name, sizeof name, "prior_%03zu.vvol", i);
            write_volume(denormalize_mu(pr.prior), prior_dir / name);
            next_priors.push_back(std::move(pr.prior));
        }
        priors = std::move(next_priors);
    }
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string pred, ref, list;
};

int cmd_eval(const EvalArgs& a, const RunConfig& rc) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!a.list.empty()) {
        std::FILE* f = std::fopen(a.list.c_str(), "rb");
        if (!f) throw IoError("eval: cannot open " + a.list);
        std::string text;
        char chunk[4096];
        std::size_t got;
        while ((got = std::fread(chunk, 1, sizeof chunk, f)) > 0) text.append(chunk, got);
        std::fclose(f);
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t eol = text.find('\n', pos);
            if (eol == std::string::npos) eol = text.size();
            std::string line = text.substr(pos, eol - pos);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            pos = eol + 1;
            if (line.empty() || line[0] == '#') continue;
            std::size_t tab = line.find('\t');
            if (tab == std::string::npos)
                throw FormatError("eval list: expected pred<TAB>ref, got '" + line + "'");
            pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
        }
    } else {
        if (a.pred.empty() || a.ref.empty())
            throw UsageFailure("eval needs --pred and --ref (or --list)");
        pairs.emplace_back(a.pred, a.ref);
    }
    if (pairs.empty()) throw ContractError("eval: no case pairs");

    std::vector<MetricReport> reports;
    std::printf("case\tpsnr_db\tssim\trmse\n");
    for (const auto& [pred_path, ref_path] : pairs) {
        Volume3D pred = load_normalized(pred_path, false);
        Volume3D ref = load_normalized(ref_path, false);
        std::optional<Volume3D> mask;
        if (rc.eval_masked) mask = body_mask(denormalize_mu(ref));
        auto rep = evaluate_case(pred, ref, mask ? &*mask : nullptr, rc.ssim_window);
        reports.push_back(rep);
        std::printf("%s\t%.6f\t%.9f\t%.9g\n", fs::path(pred_path).stem().string().c_str(),
                    rep.psnr_db, rep.ssim, rep.rmse);
    }
    auto agg = aggregate(reports);
    std::printf("mean±std\t%.6f±%.6f\t%.9f±%.9f\t%.9g±%.9g\n", agg.psnr_db.mean, agg.psnr_db.stddev,
                agg.ssim.mean, agg.ssim.stddev, agg.rmse.mean, agg.rmse.stddev);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"POUR-Net pipeline: phantom data, OUR-Net training, PPGM priors, cascaded "
                 "attenuation-map generation, and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "pour 1.0.0");
    // let --config / --seed appear after the subcommand name as well
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "run configuration file (key = value lines)")
        ->expected(1);
    std::optional<std::uint64_t> seed_flag;
    app.add_option("--seed", seed_flag, "override the config seed");

    PhantomArgs pa;
    auto* sc_phantom = app.add_subcommand("phantom", "generate phantom cases, manifests, atlas");
    sc_phantom->add_option("--out", pa.out_dir, "output directory")->required();
    sc_phantom->add_option("--count", pa.count, "number of cases");
    std::optional<int> size_flag;
    sc_phantom->add_option("--size", size_flag, "cubic extent (divisible by 4)");
    sc_phantom->add_option("--fractions", pa.fractions, "comma-separated count fractions");
    sc_phantom->add_option("--atlas", pa.atlas_count, "also write an atlas of this many entries");

    TrainArgs ta;
    auto* sc_train = app.add_subcommand("train", "train one cascade stage");
    sc_train->add_option("--manifest", ta.manifest, "training manifest")->required();
    sc_train->add_option("--stage", ta.stage, "cascade stage number (1-based)");
    sc_train->add_option("--out", ta.out, "checkpoint path (default stage{k}.pour)");
    sc_train->add_option("--log", ta.log, "training-loss log path");
    sc_train->add_option("--priors", ta.priors_dir, "prior volumes directory (stage >= 2)");

    InferArgs ia;
    auto* sc_infer = app.add_subcommand("infer", "single-volume OUR-Net inference");
    sc_infer->add_option("--model", ia.model, "stage checkpoint")->required();
    sc_infer->add_option("--lambda", ia.lambda, "activity volume")->required();
    sc_infer->add_option("--mu-mlaa", ia.mu_mlaa, "degraded attenuation volume")->required();
    sc_infer->add_option("--prior", ia.prior, "prior volume (3-channel stages)");
    sc_infer->add_option("--out", ia.out, "output attenuation volume")->required();
    sc_infer->add_option("--patch", ia.patch, "sliding-patch extent (0: whole volume)");
    sc_infer->add_option("--stride", ia.stride, "sliding-patch stride (default: patch)");

    std::string match_atlas, match_query;
    int match_presample = 1;
    auto* sc_match = app.add_subcommand("match", "exhaustive atlas match for a query volume");
    sc_match->add_option("--atlas", match_atlas, "atlas directory")->required();
    sc_match->add_option("--query", match_query, "query volume")->required();
    sc_match->add_option("--presample", match_presample, "comparison-grid divisor");

    std::string reg_fixed, reg_moving, reg_out;
    auto* sc_register = app.add_subcommand("register", "diffeomorphic demons registration");
    sc_register->add_option("--fixed", reg_fixed, "fixed volume")->required();
    sc_register->add_option("--moving", reg_moving, "moving volume")->required();
    sc_register->add_option("--out", reg_out, "warped moving volume");

    auto* sc_cascade = app.add_subcommand("cascade", "multi-stage pipeline");
    sc_cascade->require_subcommand(1);
    CascadeRunArgs cra;
    auto* sc_crun = sc_cascade->add_subcommand("run", "run a trained cascade on one case");
    sc_crun->add_option("--lambda", cra.lambda, "activity volume")->required();
    sc_crun->add_option("--mu-mlaa", cra.mu_mlaa, "degraded attenuation volume")->required();
    sc_crun->add_option("--stages-dir", cra.stages_dir, "directory with stage{k}.pour")
        ->required();
    sc_crun->add_option("--atlas", cra.atlas_dir, "atlas directory (needed for >= 2 stages)");
    sc_crun->add_option("--out", cra.out, "final attenuation volume")->required();
    sc_crun->add_option("--stage-outputs", cra.stage_out_dir, "also write per-stage outputs");
    sc_crun->add_option("--stages", cra.stages, "cascade count (default: config)");
    CascadeTrainArgs cta;
    auto* sc_ctrain = sc_cascade->add_subcommand("train", "train all stages with prior handoff");
    sc_ctrain->add_option("--manifest", cta.manifest, "training manifest")->required();
    sc_ctrain->add_option("--atlas", cta.atlas_dir, "atlas directory (needed for >= 2 stages)");
    sc_ctrain->add_option("--out-dir", cta.out_dir, "checkpoint/prior output directory")
        ->required();

    EvalArgs ea;
    auto* sc_eval = app.add_subcommand("eval", "volumetric psnr/ssim/rmse");
    sc_eval->add_option("--pred", ea.pred, "predicted volume");
    sc_eval->add_option("--ref", ea.ref, "reference volume");
    sc_eval->add_option("--list", ea.list, "file of pred<TAB>ref lines");

    bool dump_defaults = false;
    std::string check_path;
    auto* sc_config = app.add_subcommand("config", "configuration schema tools");
    sc_config->add_flag("--dump-defaults", dump_defaults, "print the default configuration");
    sc_config->add_option("--check", check_path, "parse a config file and echo it normalized");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return 2;
    }

    // configuration + argument validation: failures here are usage errors
    RunConfig rc;
    try {
        if (!config_path.empty()) rc = parse_run_config(config_path);
        if (seed_flag) rc.seed = *seed_flag;
        if (size_flag) rc.phantom.size = *size_flag;
        if (sc_phantom->parsed()) {
            rc.phantom.validate();
            rc.degrade.validate();
            parse_fractions(pa.fractions);
        }
        rc.cascade.validate();
    } catch (const Error& e) {
        std::fprintf(stderr, "pour: %s\n", e.what());
        return 2;
    }

    try {
        if (sc_phantom->parsed()) return cmd_phantom(pa, rc);
        if (sc_train->parsed()) return cmd_train(ta, rc);
        if (sc_infer->parsed()) return cmd_infer(ia, rc);
        if (sc_match->parsed()) return cmd_match(match_atlas, match_query, match_presample);
        if (sc_register->parsed()) return cmd_register(reg_fixed, reg_moving, reg_out, rc);
        if (sc_cascade->parsed()) {
            if (sc_crun->parsed()) return cmd_cascade_run(cra, rc);
            if (sc_ctrain->parsed()) return cmd_cascade_train(cta, rc);
        }
        if (sc_eval->parsed()) return cmd_eval(ea, rc);
        if (sc_config->parsed()) {
            if (dump_defaults) {
                std::fputs(dump_default_config().c_str(), stdout);
                return 0;
            }
            if (!check_path.empty()) {
                (void)parse_run_config(check_path);
                std::printf("%s: ok\n", check_path.c_str());
                return 0;
            }
            std::fprintf(stderr, "pour config: nothing to do (use --dump-defaults or --check)\n");
            return 2;
        }
    } catch (const UsageFailure& e) {
        std::fprintf(stderr, "pour: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "pour: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "pour: %s\n", e.what());
        return 1;
    }
    return 2;
}
