// Command-line surface for the voxgan pipeline: synthesize training images,
// train, sample, condition, run ensembles, export slices. Every run appends a
// JSON-lines record (flags, seeds, input/output hashes) to a manifest so any
// artifact can be reproduced. Exit codes: 0 success, 1 runtime/data error,
// 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxgan/condition.hpp"
#include "voxgan/ensemble.hpp"
#include "voxgan/hash.hpp"
#include "voxgan/synthetic.hpp"
#include "voxgan/train.hpp"
#include "voxgan/volume.hpp"

namespace {

constexpr const char* kVersion = "voxgan-0.1.0";

using voxgan::Axis;

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// One manifest line per run; hashes make reruns comparable.
struct ManifestWriter {
    std::string path = "runs.manifest";
    nlohmann::json record;

    void begin(const std::string& command, const std::vector<std::string>& argv) {
        record["command"] = command;
        record["argv"] = argv;
        record["version"] = kVersion;
        record["started"] = iso_now();
        record["inputs"] = nlohmann::json::object();
        record["outputs"] = nlohmann::json::object();
        record["seeds"] = nlohmann::json::object();
    }
    void seed(const std::string& name, std::uint64_t value) {
        record["seeds"][name] = value;
    }
    void input(const std::string& file) {
        record["inputs"][file] = voxgan::hash_hex(voxgan::hash_file(file));
    }
    void output(const std::string& file) {
        record["outputs"][file] = voxgan::hash_hex(voxgan::hash_file(file));
    }
    void commit() {
        record["finished"] = iso_now();
        std::ofstream out(path, std::ios::app);
        if (!out) throw std::runtime_error("cannot append manifest: " + path);
        out << record.dump() << '\n';
    }
};

Axis parse_axis(const std::string& s) {
    if (s == "x") return Axis::x;
    if (s == "y") return Axis::y;
    if (s == "z") return Axis::z;
    throw CLI::ValidationError("--axis", "must be one of x, y, z");
}

std::string stem_of(const std::string& path) {
    const std::string ext = ".gvox";
    if (path.size() > ext.size() &&
        path.compare(path.size() - ext.size(), ext.size(), ext) == 0)
        return path.substr(0, path.size() - ext.size());
    return path;
}

struct ProblemFlags {
    std::string data_path;
    std::string mask_path;
    bool well_center = false;
    std::string planes;
    std::string mode = "auto";
    float perceptual_weight = 0.01f;
    std::string perceptual_form = "critic_score";
    float content_tol = 1e-3f;
    std::size_t max_iters = 5000;
    float lr = 0.05f;
    float momentum = 0.9f;
    std::size_t restarts = 5;

    void attach(CLI::App* cmd) {
        cmd->add_option("--data", data_path,
                        "Reference/conditioning volume (GVOX)")
            ->required();
        cmd->add_option("--mask", mask_path, "Explicit binary mask (GVOX)");
        cmd->add_flag("--well-center", well_center,
                      "Condition to the centered vertical well");
        cmd->add_option("--planes", planes,
                        "Center cross-sections, subset of \"xyz\"");
        cmd->add_option("--mode", mode, "binary | continuous (default from model)");
        cmd->add_option("--perceptual-weight", perceptual_weight,
                        "Weight of the perceptual term");
        cmd->add_option("--perceptual-form", perceptual_form,
                        "critic_score | log_sigmoid");
        cmd->add_option("--content-tol", content_tol,
                        "Continuous-mode stopping tolerance");
        cmd->add_option("--max-iters", max_iters, "Iteration budget per attempt");
        cmd->add_option("--lr", lr, "Latent learning rate");
        cmd->add_option("--momentum", momentum, "Latent momentum");
        cmd->add_option("--restarts", restarts, "Total attempts per realization");
    }

    voxgan::ConditioningProblem build(const voxgan::ArchSpec& spec,
                                      ManifestWriter& manifest) const {
        const int geoms = (mask_path.empty() ? 0 : 1) + (well_center ? 1 : 0) +
                          (planes.empty() ? 0 : 1);
        if (geoms != 1)
            throw CLI::ValidationError(
                "--mask/--well-center/--planes",
                "exactly one conditioning geometry must be given");

        manifest.input(data_path);
        voxgan::Volume data = voxgan::read_gvox(data_path);

        voxgan::ConditioningProblem p;
        if (!mask_path.empty()) {
            manifest.input(mask_path);
            p.mask = voxgan::mask_from_volume(voxgan::read_gvox(mask_path));
        } else if (well_center) {
            p.mask = voxgan::make_well_mask(data.dims);
        } else {
            std::vector<Axis> axes;
            for (char c : planes) axes.push_back(parse_axis(std::string(1, c)));
            p.mask = voxgan::make_plane_mask(data.dims, axes);
        }

        std::string m = mode;
        if (m == "auto")
            m = spec.output_mode == voxgan::OutputMode::indicator ? "binary"
                                                                  : "continuous";
        if (m == "binary") {
            p.mode = voxgan::ConditionMode::binary;
            p.y = voxgan::apply_mask(voxgan::threshold_volume(data), p.mask);
        } else if (m == "continuous") {
            p.mode = voxgan::ConditionMode::continuous;
            p.y = voxgan::apply_mask(data, p.mask);
        } else {
            throw CLI::ValidationError("--mode", "must be binary or continuous");
        }

        p.perceptual_weight = perceptual_weight;
        if (perceptual_form == "critic_score")
            p.perceptual_form = voxgan::PerceptualForm::critic_score;
        else if (perceptual_form == "log_sigmoid")
            p.perceptual_form = voxgan::PerceptualForm::log_sigmoid;
        else
            throw CLI::ValidationError("--perceptual-form",
                                       "must be critic_score or log_sigmoid");
        p.content_tol = content_tol;
        p.max_iters = max_iters;
        p.lr = lr;
        p.momentum = momentum;
        p.restarts = restarts;
        return p;
    }
};

void write_report_row(const std::string& path, std::uint64_t seed,
                      const voxgan::ConditionedRealization& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open report: " + path);
    out << seed << ',' << (r.converged ? 1 : 0) << ',' << r.iterations << ','
        << r.content_loss << ',' << r.perceptual_loss << ',' << r.accuracy << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3-d adversarial voxel modeling: training and conditional "
                 "simulation"};
    app.require_subcommand(1);
    std::string manifest_path = "runs.manifest";
    app.add_option("--manifest", manifest_path,
                   "JSON-lines run manifest (appended)");

    // ---- make-synthetic -----------------------------------------------------
    auto* mk = app.add_subcommand("make-synthetic",
                                  "Generate a synthetic training image");
    std::string mk_kind;
    mk->add_option("kind", mk_kind, "channels | granular")->required();
    std::size_t mk_dims = 64;
    mk->add_option("--dims", mk_dims, "Cubic edge length")
        ->check(CLI::PositiveNumber);
    std::uint64_t mk_seed = 0;
    mk->add_option("--seed", mk_seed, "Generation seed");
    std::string mk_out;
    mk->add_option("-o,--output", mk_out, "Output GVOX path")->required();
    std::size_t mk_channels = 12;
    double mk_radius = 4.0, mk_amplitude = 4.0, mk_wavelength = 32.0;
    std::string mk_axis = "x";
    mk->add_option("--channel-count", mk_channels, "Number of channels");
    mk->add_option("--channel-radius", mk_radius, "Channel radius (voxels)");
    mk->add_option("--sinuosity-amplitude", mk_amplitude, "Sinuosity amplitude");
    mk->add_option("--sinuosity-wavelength", mk_wavelength, "Sinuosity wavelength");
    mk->add_option("--axis", mk_axis, "Principal channel axis");
    std::size_t mk_spheres = 200;
    double mk_rmin = 4.0, mk_rmax = 8.0, mk_smooth = 1.5;
    mk->add_option("--sphere-count", mk_spheres, "Number of spheres");
    mk->add_option("--radius-min", mk_rmin, "Minimum sphere radius");
    mk->add_option("--radius-max", mk_rmax, "Maximum sphere radius");
    mk->add_option("--smoothing-width", mk_smooth, "Gaussian sigma (voxels)");

    // ---- train ---------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train the adversarial pair on a "
                                           "training image");
    std::string tr_ti;
    tr->add_option("ti", tr_ti, "Training image (GVOX)")->required();
    std::string tr_out;
    tr->add_option("-o,--output", tr_out, "Checkpoint path (GCKP)")->required();
    std::string tr_log;
    tr->add_option("--log", tr_log, "Training log CSV (default <output>.log.csv)");
    std::string tr_resume;
    tr->add_option("--resume", tr_resume, "Resume from an existing checkpoint");
    voxgan::TrainingConfig tr_cfg;
    std::size_t tr_steps = 0;
    tr->add_option("--steps", tr_steps, "Generator steps to reach")->required();
    tr->add_option("--batch-size", tr_cfg.batch_size, "Batch size")
        ->check(CLI::PositiveNumber);
    tr->add_option("--critic-iters", tr_cfg.critic_iters_per_gen,
                   "Critic updates per generator update")
        ->check(CLI::PositiveNumber);
    tr->add_option("--gp-weight", tr_cfg.gp_weight, "Gradient-penalty weight");
    tr->add_option("--learning-rate", tr_cfg.learning_rate, "Adam learning rate");
    tr->add_option("--adam-beta1", tr_cfg.adam_beta1, "Adam beta1");
    tr->add_option("--adam-beta2", tr_cfg.adam_beta2, "Adam beta2");
    tr->add_option("--seed", tr_cfg.seed, "Training seed");
    tr->add_option("--checkpoint-every", tr_cfg.checkpoint_every,
                   "Refresh the checkpoint every N generator steps");
    voxgan::ArchSpec tr_spec;
    std::string tr_mode = "indicator";
    tr->add_option("--latent-dim", tr_spec.latent_dim, "Latent width")
        ->check(CLI::PositiveNumber);
    tr->add_option("--base-channels", tr_spec.base_channels, "Channel base")
        ->check(CLI::PositiveNumber);
    tr->add_option("--output-size", tr_spec.output_size,
                   "Cubic output edge (power of two >= 16)");
    tr->add_option("--output-mode", tr_mode, "indicator | gray");
    tr->add_option("--critic-slope", tr_spec.critic_slope, "Leaky-relu slope");
    std::size_t tr_stride = 0, tr_max_patches = 0;
    tr->add_option("--patch-stride", tr_stride,
                   "Patch grid stride (default output-size/2)");
    tr->add_option("--max-patches", tr_max_patches,
                   "Random patch subsample limit (0 keeps all)");

    // ---- sample ----------------------------------------------------------------
    auto* sm = app.add_subcommand("sample", "Draw unconditional realizations");
    std::string sm_ckpt;
    sm->add_option("ckpt", sm_ckpt, "Checkpoint (GCKP)")->required();
    std::size_t sm_n = 1;
    sm->add_option("-n,--count", sm_n, "Number of realizations")
        ->check(CLI::PositiveNumber);
    std::uint64_t sm_seed = 0;
    sm->add_option("--seed", sm_seed, "Latent seed");
    std::string sm_out;
    sm->add_option("-o,--output", sm_out, "Output prefix")->required();

    // ---- condition -----------------------------------------------------------
    auto* cd = app.add_subcommand("condition",
                                  "Optimize one realization onto conditioning "
                                  "data");
    std::string cd_ckpt;
    cd->add_option("ckpt", cd_ckpt, "Checkpoint (GCKP)")->required();
    ProblemFlags cd_flags;
    cd_flags.attach(cd);
    std::uint64_t cd_seed = 0;
    cd->add_option("--seed", cd_seed, "Realization seed");
    bool cd_has_init = false;
    std::uint64_t cd_init_z_seed = 0;
    auto* cd_init_opt =
        cd->add_option("--init-z-seed", cd_init_z_seed,
                       "Start from sample_latent(1, latent, this seed)");
    std::string cd_out;
    cd->add_option("-o,--output", cd_out, "Realization GVOX path")->required();
    std::string cd_report;
    cd->add_option("--report", cd_report, "Report CSV (default <output>.report.csv)");

    // ---- ensemble -------------------------------------------------------------
    auto* en = app.add_subcommand("ensemble",
                                  "Run many conditioned realizations and map "
                                  "mean/std");
    std::string en_ckpt;
    en->add_option("ckpt", en_ckpt, "Checkpoint (GCKP)")->required();
    ProblemFlags en_flags;
    en_flags.attach(en);
    std::size_t en_n = 16;
    en->add_option("-n,--count", en_n, "Ensemble size")->check(CLI::PositiveNumber);
    std::uint64_t en_seed_base = 0;
    en->add_option("--seed-base", en_seed_base, "First realization seed");
    std::size_t en_workers = 1;
    en->add_option("--workers", en_workers, "Parallel conditioning workers")
        ->check(CLI::PositiveNumber);
    std::string en_out;
    en->add_option("-o,--outdir", en_out, "Output directory")->required();

    // ---- export-slice ----------------------------------------------------------
    auto* ex = app.add_subcommand("export-slice", "Write one cross-section as PGM");
    std::string ex_vol;
    ex->add_option("volume", ex_vol, "Volume (GVOX)")->required();
    std::string ex_axis = "z";
    ex->add_option("--axis", ex_axis, "Slice axis: x | y | z");
    std::size_t ex_index = 0;
    ex->add_option("--index", ex_index, "Slice index along the axis");
    std::string ex_out;
    ex->add_option("-o,--output", ex_out, "Output PGM path")->required();

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

    ManifestWriter manifest;
    manifest.path = manifest_path;
    std::vector<std::string> args(argv, argv + argc);

    try {
        if (mk->parsed()) {
            manifest.begin("make-synthetic", args);
            manifest.seed("seed", mk_seed);
            voxgan::Volume v;
            if (mk_kind == "channels") {
                voxgan::ChannelSpec spec;
                spec.dims = {mk_dims, mk_dims, mk_dims};
                spec.channel_count = mk_channels;
                spec.channel_radius = mk_radius;
                spec.sinuosity_amplitude = mk_amplitude;
                spec.sinuosity_wavelength = mk_wavelength;
                spec.principal_axis = parse_axis(mk_axis);
                spec.seed = mk_seed;
                v = voxgan::make_channels(spec);
            } else if (mk_kind == "granular") {
                voxgan::GranularSpec spec;
                spec.dims = {mk_dims, mk_dims, mk_dims};
                spec.sphere_count = mk_spheres;
                spec.radius_min = mk_rmin;
                spec.radius_max = mk_rmax;
                spec.smoothing_width = mk_smooth;
                spec.seed = mk_seed;
                v = voxgan::make_granular(spec);
            } else {
                std::cerr << "make-synthetic: kind must be channels or granular\n";
                return 2;
            }
            voxgan::write_gvox(mk_out, v);
            manifest.output(mk_out);
            manifest.commit();
        } else if (tr->parsed()) {
            manifest.begin("train", args);
            manifest.seed("seed", tr_cfg.seed);
            manifest.input(tr_ti);

            if (tr_mode == "indicator")
                tr_spec.output_mode = voxgan::OutputMode::indicator;
            else if (tr_mode == "gray")
                tr_spec.output_mode = voxgan::OutputMode::gray;
            else {
                std::cerr << "train: --output-mode must be indicator or gray\n";
                return 2;
            }
            tr_spec.validate();
            tr_cfg.total_gen_steps = tr_steps;
            tr_cfg.checkpoint_path = tr_out;
            tr_cfg.validate();

            voxgan::Volume ti = voxgan::read_gvox(tr_ti);
            const std::size_t stride =
                tr_stride != 0 ? tr_stride : tr_spec.output_size / 2;
            auto patches = voxgan::extract_patches(ti, tr_spec.output_size, stride,
                                                   tr_cfg.seed, tr_max_patches);

            voxgan::TrainerState state;
            if (!tr_resume.empty()) {
                manifest.input(tr_resume);
                state = voxgan::state_from_checkpoint(voxgan::read_checkpoint(tr_resume));
            } else {
                state = voxgan::make_trainer_state(tr_spec, tr_cfg.seed);
            }

            auto log = voxgan::train_steps(patches, state, tr_cfg);
            voxgan::write_checkpoint(tr_out, voxgan::state_to_checkpoint(state));
            const std::string log_path =
                tr_log.empty() ? tr_out + ".log.csv" : tr_log;
            voxgan::write_training_log_csv(log_path, log);
            manifest.output(tr_out);
            manifest.commit();
            if (log.aborted) {
                std::cerr << "train: aborted: " << log.diagnostic << '\n';
                return 1;
            }
        } else if (sm->parsed()) {
            manifest.begin("sample", args);
            manifest.seed("seed", sm_seed);
            manifest.input(sm_ckpt);
            auto state =
                voxgan::state_from_checkpoint(voxgan::read_checkpoint(sm_ckpt));
            const auto& spec = state.gen.spec;
            const auto zv = voxgan::sample_latent(sm_n, spec.latent_dim, sm_seed);
            for (std::size_t i = 0; i < sm_n; ++i) {
                voxgan::Graph<float> g;
                std::vector<float> zi(zv.begin() + i * spec.latent_dim,
                                      zv.begin() + (i + 1) * spec.latent_dim);
                auto z = g.constant({1, spec.latent_dim}, zi);
                auto out = voxgan::generate(g, state.gen, z);
                voxgan::Volume v =
                    voxgan::volume_from_sample(out.values(), spec.output_size);
                char name[32];
                std::snprintf(name, sizeof name, "_%03zu.gvox", i);
                const std::string path = stem_of(sm_out) + name;
                voxgan::write_gvox(path, v);
                manifest.output(path);
            }
            manifest.commit();
        } else if (cd->parsed()) {
            manifest.begin("condition", args);
            manifest.seed("seed", cd_seed);
            manifest.input(cd_ckpt);
            auto state =
                voxgan::state_from_checkpoint(voxgan::read_checkpoint(cd_ckpt));
            auto problem = cd_flags.build(state.gen.spec, manifest);
            problem.seed = cd_seed;
            cd_has_init = cd_init_opt->count() > 0;
            if (cd_has_init) {
                manifest.seed("init_z_seed", cd_init_z_seed);
                problem.initial_z = voxgan::sample_latent(
                    1, state.gen.spec.latent_dim, cd_init_z_seed);
            }
            auto r = voxgan::condition(problem, state.gen, state.critic);
            voxgan::write_gvox(cd_out, r.volume);
            manifest.output(cd_out);
            if (problem.mode == voxgan::ConditionMode::binary && r.converged) {
                const std::string ind = stem_of(cd_out) + "_indicator.gvox";
                voxgan::write_gvox(ind, r.thresholded);
                manifest.output(ind);
            }
            const std::string report =
                cd_report.empty() ? cd_out + ".report.csv" : cd_report;
            write_report_row(report, cd_seed, r);
            manifest.output(report);
            manifest.commit();
        } else if (en->parsed()) {
            manifest.begin("ensemble", args);
            manifest.seed("seed_base", en_seed_base);
            manifest.input(en_ckpt);
            auto state =
                voxgan::state_from_checkpoint(voxgan::read_checkpoint(en_ckpt));
            auto problem = en_flags.build(state.gen.spec, manifest);
            std::filesystem::create_directories(en_out);
            auto result = voxgan::run_ensemble(problem, state.gen, state.critic,
                                               en_n, en_seed_base, en_workers);
            const auto dir = std::filesystem::path(en_out);
            const std::string mean_path = (dir / "mean.gvox").string();
            const std::string std_path = (dir / "std.gvox").string();
            const std::string report_path = (dir / "ensemble_report.csv").string();
            voxgan::write_gvox(mean_path, result.stats.mean);
            voxgan::write_gvox(std_path, result.stats.std);
            voxgan::write_ensemble_report_csv(report_path, result);
            manifest.output(mean_path);
            manifest.output(std_path);
            manifest.output(report_path);
            if (problem.mode == voxgan::ConditionMode::binary) {
                const std::string profile_path = (dir / "profile.csv").string();
                voxgan::write_influence_csv(
                    profile_path,
                    voxgan::conditioning_influence_profile(result.stats,
                                                           problem.mask));
                manifest.output(profile_path);
            }
            manifest.commit();
        } else if (ex->parsed()) {
            manifest.begin("export-slice", args);
            manifest.input(ex_vol);
            voxgan::Volume v = voxgan::read_gvox(ex_vol);
            voxgan::export_slice(v, parse_axis(ex_axis), ex_index, ex_out);
            manifest.output(ex_out);
            manifest.commit();
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const voxgan::format_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
