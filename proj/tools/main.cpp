#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "unfoldseg/config.hpp"
#include "unfoldseg/image_io.hpp"
#include "unfoldseg/metrics.hpp"
#include "unfoldseg/model.hpp"
#include "unfoldseg/solver.hpp"
#include "unfoldseg/synth.hpp"
#include "unfoldseg/textio.hpp"
#include "unfoldseg/trace.hpp"
#include "unfoldseg/unfolded.hpp"

namespace fs = std::filesystem;
using namespace unfoldseg;

namespace {

// Rebuilds per-stage energies from recorded stage states so the unfolded
// path can emit the same trace schema as the solver.
SolveResult trace_from_unfolded(const Tensor& c, const UnfoldedResult& run,
                                const SolverConfig& cfg, const Tensor* init_mask) {
    SolveResult out;
    Tensor m_prev = init_mask ? *init_mask : Tensor(c.height(), c.width(), 1, 0.0);
    Tensor m_prev2 = m_prev;
    Tensor b_prev(c.height(), c.width(), c.channels(), 0.0);
    for (const StageState& st : run.stages) {
        const ResidualContext ctx = make_residual_context(m_prev, m_prev2);
        StageTrace t;
        t.surrogate_before = surrogate_mask_energy(m_prev, c, b_prev, ctx, cfg);
        t.surrogate_after = surrogate_mask_energy(st.m_hat, c, b_prev, ctx, cfg);
        t.data_energy = data_energy(c, st.m, st.b);
        t.sparsity_energy = sparsity_energy(st.m, ctx, cfg.alpha);
        out.trace.push_back(t);
        out.stages.push_back(st);
        m_prev2 = m_prev;
        m_prev = st.m;
        b_prev = st.b;
    }
    return out;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_config(path);
}

int run_solve(const std::string& image_path, const std::string& config_path,
              const std::string& init_mask_path, const std::string& gt_path,
              const std::string& checkpoint_path, const std::string& out_path,
              const std::string& out_binary_path, const std::string& trace_path) {
    const RunConfig rc = load_run_config(config_path);
    const SolverConfig& cfg = rc.solver;
    cfg.validate();
    const Tensor image = load_image(image_path);

    Tensor init_mask;
    const bool has_init = !init_mask_path.empty();
    if (has_init) init_mask = load_image(init_mask_path);

    Tensor gt;
    const bool has_gt = !gt_path.empty();
    if (has_gt) gt = load_image(gt_path);

    SolveResult result;
    if (!checkpoint_path.empty()) {
        const ParamSet params = load_checkpoint(checkpoint_path);
        if (params.stages != cfg.stages)
            throw std::runtime_error("checkpoint has " + std::to_string(params.stages) +
                                     " stages but solver.stages is " +
                                     std::to_string(cfg.stages));
        if (params.image_channels != image.channels())
            throw std::runtime_error("checkpoint channel count does not match the image");
        const UnfoldedResult run =
            run_unfolded(image, params, cfg, nullptr, has_init ? &init_mask : nullptr);
        result = trace_from_unfolded(image, run, cfg, has_init ? &init_mask : nullptr);
    } else {
        result = has_init ? solve(image, cfg, init_mask) : solve(image, cfg);
    }

    const Tensor& mask = result.final_mask();
    if (!out_path.empty()) save_mask(out_path, mask);
    if (!out_binary_path.empty()) save_mask(out_binary_path, ops::threshold(mask, cfg.threshold));
    if (!trace_path.empty())
        emit_trace(trace_path, render_solve_trace(result, has_gt ? &gt : nullptr, cfg.threshold));

    if (has_gt) {
        const MetricReport r = evaluate(mask, gt);
        std::printf("mae=%s f_beta=%s iou=%s dice=%s\n", fmt_double(r.mae).c_str(),
                    fmt_double(r.f_beta).c_str(),
                    fmt_double(iou(ops::threshold(mask, cfg.threshold), gt)).c_str(),
                    fmt_double(dice(ops::threshold(mask, cfg.threshold), gt)).c_str());
    } else {
        std::printf("stages=%d final_mask_mean=%s\n", cfg.stages,
                    fmt_double(ops::mean(mask)).c_str());
    }
    return 0;
}

std::vector<TrainSample> load_training_set(const std::string& manifest_path) {
    const auto entries = load_manifest(manifest_path);
    const fs::path dir = fs::path(manifest_path).parent_path();
    std::vector<TrainSample> data;
    for (const auto& e : entries) {
        TrainSample s;
        s.image = load_image((dir / e.image_path).string());
        s.gt = load_image((dir / gt_path_for(e.image_path)).string());
        data.push_back(std::move(s));
    }
    if (data.empty()) throw std::runtime_error("manifest lists no scenes: " + manifest_path);
    return data;
}

int run_train(const std::string& manifest_path, const std::string& config_path,
              const std::string& out_path, const std::string& trace_path, int steps_override,
              double lr_override, int batch_override, long long seed_override) {
    RunConfig rc = load_run_config(config_path);
    if (steps_override >= 0) rc.training.steps = steps_override;
    if (lr_override >= 0.0) rc.training.lr = lr_override;
    if (batch_override > 0) rc.training.batch_size = batch_override;
    if (seed_override >= 0) rc.training.seed = static_cast<std::uint64_t>(seed_override);
    rc.solver.validate();

    const auto data = load_training_set(manifest_path);
    const ParamSet init = ParamSet::random_init(rc.solver.stages, data[0].image.channels(),
                                                rc.solver, rc.training.seed);
    const TrainResult result = train(data, rc.training, rc.solver, init);

    const std::string ckpt = out_path.empty()
                                 ? (rc.paths.checkpoint.empty() ? "params.ckpt"
                                                                : rc.paths.checkpoint)
                                 : out_path;
    save_checkpoint(ckpt, result.params);
    if (!trace_path.empty()) emit_trace(trace_path, render_train_trace(result.curve));

    std::printf("samples=%zu steps=%d params=%zu\n", data.size(), rc.training.steps,
                result.params.parameter_count());
    std::printf("initial: loss=%s mse=%s\n", fmt_double(result.initial_eval.loss).c_str(),
                fmt_double(result.initial_eval.mse).c_str());
    std::printf("final:   loss=%s mse=%s\n", fmt_double(result.final_eval.loss).c_str(),
                fmt_double(result.final_eval.mse).c_str());
    std::printf("checkpoint=%s\n", ckpt.c_str());
    return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(pred_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm") names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw std::runtime_error("no .pgm/.ppm predictions in " + pred_dir);

    MetricReport mean{};
    std::size_t count = 0;
    std::printf("name\tmae\tf_beta\tiou\tdice\n");
    for (const std::string& name : names) {
        const fs::path gt_path = fs::path(gt_dir) / name;
        if (!fs::exists(gt_path)) {
            std::fprintf(stderr, "skipping %s: no ground truth\n", name.c_str());
            continue;
        }
        const Tensor pred = load_image((fs::path(pred_dir) / name).string());
        const Tensor gt = load_image(gt_path.string());
        const MetricReport r = evaluate(pred, gt);
        std::printf("%s\t%s\t%s\t%s\t%s\n", name.c_str(), fmt_double(r.mae).c_str(),
                    fmt_double(r.f_beta).c_str(), fmt_double(r.iou).c_str(),
                    fmt_double(r.dice).c_str());
        mean.mae += r.mae;
        mean.f_beta += r.f_beta;
        mean.iou += r.iou;
        mean.dice += r.dice;
        ++count;
    }
    if (count == 0) throw std::runtime_error("no prediction/ground-truth pairs matched");
    const double inv = 1.0 / static_cast<double>(count);
    std::printf("mean\t%s\t%s\t%s\t%s\n", fmt_double(mean.mae * inv).c_str(),
                fmt_double(mean.f_beta * inv).c_str(), fmt_double(mean.iou * inv).c_str(),
                fmt_double(mean.dice * inv).c_str());
    std::printf("# s_alpha, e_phi: unavailable (not implemented)\n");
    return 0;
}

int run_synth(int n, const std::string& difficulty, long long seed, const std::string& out_dir,
              int size) {
    Difficulty d;
    if (difficulty == "easy") d = Difficulty::kEasy;
    else if (difficulty == "medium") d = Difficulty::kMedium;
    else if (difficulty == "hard") d = Difficulty::kHard;
    else throw CLI::ValidationError("--difficulty must be easy, medium, or hard");
    const auto entries = make_suite(n, d, static_cast<std::uint64_t>(seed), out_dir, size);
    std::printf("wrote %zu scenes to %s (manifest.tsv)\n", entries.size(), out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concealed-object segmentation: model-based solver and unfolded network"};
    app.require_subcommand(1);

    std::string image_path, config_path, init_mask_path, gt_path, checkpoint_path;
    std::string out_path, out_binary_path, trace_path;
    auto* solve_cmd = app.add_subcommand("solve", "Segment one image");
    solve_cmd->add_option("image", image_path, "input image (PGM/PPM)")->required();
    solve_cmd->add_option("--config", config_path, "config file");
    solve_cmd->add_option("--init-mask", init_mask_path, "external mask seeding M_0");
    solve_cmd->add_option("--gt", gt_path, "ground-truth mask for trace metrics");
    solve_cmd->add_option("--checkpoint", checkpoint_path,
                          "trained parameters; runs the unfolded model");
    solve_cmd->add_option("--out", out_path, "write the soft final mask here");
    solve_cmd->add_option("--out-binary", out_binary_path, "write the thresholded mask here");
    solve_cmd->add_option("--trace", trace_path, "write the per-stage energy CSV here");

    std::string manifest_path, train_out, train_trace;
    int steps_override = -1, batch_override = -1;
    double lr_override = -1.0;
    long long seed_override = -1;
    auto* train_cmd = app.add_subcommand("train", "Train the unfolded model on a suite");
    train_cmd->add_option("manifest", manifest_path, "scene manifest (make with synth)")
        ->required();
    train_cmd->add_option("--config", config_path, "config file");
    train_cmd->add_option("--out", train_out, "checkpoint output path");
    train_cmd->add_option("--trace", train_trace, "write the loss-curve CSV here");
    train_cmd->add_option("--steps", steps_override, "override training.steps");
    train_cmd->add_option("--lr", lr_override, "override training.lr");
    train_cmd->add_option("--batch", batch_override, "override training.batch_size");
    train_cmd->add_option("--seed", seed_override, "override training.seed");

    std::string pred_dir, gt_dir;
    auto* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
    eval_cmd->add_option("pred-dir", pred_dir, "directory of predicted masks")->required();
    eval_cmd->add_option("gt-dir", gt_dir, "directory of ground-truth masks")->required();

    int synth_n = 16, synth_size = 64;
    std::string synth_difficulty = "easy", synth_out;
    long long synth_seed = 1;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene suite");
    synth_cmd->add_option("--n", synth_n, "number of scenes")->required();
    synth_cmd->add_option("--difficulty", synth_difficulty, "easy | medium | hard")->required();
    synth_cmd->add_option("--seed", synth_seed, "suite seed")->required();
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    synth_cmd->add_option("--size", synth_size, "image side length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (solve_cmd->parsed())
            return run_solve(image_path, config_path, init_mask_path, gt_path, checkpoint_path,
                             out_path, out_binary_path, trace_path);
        if (train_cmd->parsed())
            return run_train(manifest_path, config_path, train_out, train_trace, steps_override,
                             lr_override, batch_override, seed_override);
        if (eval_cmd->parsed()) return run_eval(pred_dir, gt_dir);
        if (synth_cmd->parsed())
            return run_synth(synth_n, synth_difficulty, synth_seed, synth_out, synth_size);
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
