#include "unfoldseg/unfolded.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "unfoldseg/features.hpp"
#include "unfoldseg/image_io.hpp"
#include "unfoldseg/rng.hpp"
#include "unfoldseg/textio.hpp"

namespace unfoldseg {

namespace {

constexpr double kProbEps = 1e-6;  // probability clamp inside BCE/IoU terms

Tensor make_kernel(int kh, int kw, int cin, int cout, double fill = 0.0) {
    return Tensor(kh, kw, cin * cout, fill);
}

// Identity center tap on matching channel pairs.
Tensor identity_kernel(int kh, int kw, int cin, int cout) {
    Tensor k = make_kernel(kh, kw, cin, cout);
    const int diag = std::min(cin, cout);
    for (int c = 0; c < diag; ++c) k.at(kh / 2, kw / 2, c * cout + c) = 1.0;
    return k;
}

Tensor random_kernel(SplitMix64& rng, int kh, int kw, int cin, int cout, double gain) {
    Tensor k = make_kernel(kh, kw, cin, cout);
    const double lim = gain / std::sqrt(static_cast<double>(kh) * kw * cin);
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = rng.range(-lim, lim);
    return k;
}

Tensor scalar_tensor(double v) { return Tensor(1, 1, 1, v); }

StageParams stage_shapes(int image_channels, const SolverConfig& cfg) {
    const int f = kFeatureChannels;
    const int w = kRefinerWidth;
    const int c = image_channels;
    StageParams p;
    // softplus cannot reach 0 exactly; zero config weights land at 1e-12
    p.alpha_raw = scalar_tensor(inverse_softplus(cfg.alpha > 0.0 ? cfg.alpha : 1e-12));
    p.mu_raw = scalar_tensor(inverse_softplus(cfg.mu));
    p.lambda_raw = scalar_tensor(inverse_softplus(cfg.lambda > 0.0 ? cfg.lambda : 1e-12));
    p.lipschitz_raw = scalar_tensor(inverse_softplus(cfg.lipschitz));
    p.slope = scalar_tensor(1.0);
    p.sf_a = make_kernel(3, 3, f, f);
    p.sf_b = make_kernel(3, 3, f, f);
    p.lf_h = make_kernel(1, 11, f, f);
    p.lf_v = make_kernel(11, 1, f, f);
    p.fuse = make_kernel(3, 3, f, f);
    p.head_m = make_kernel(3, 3, f, 1);
    p.head_e = make_kernel(3, 3, f, 1);
    p.enc1 = make_kernel(3, 3, c + 1, w);
    p.enc2 = make_kernel(3, 3, w, w);
    p.mid = make_kernel(3, 3, w, w);
    p.dec2 = make_kernel(3, 3, w, w);
    p.dec1 = make_kernel(3, 3, w, w);
    p.head_b = make_kernel(3, 3, w, c);
    p.head_c = make_kernel(3, 3, w, c);
    return p;
}

template <class PS, class F>
void visit_impl(PS& ps, F&& f) {
    for (int k = 0; k < ps.stages; ++k) {
        auto& s = ps.stage[static_cast<std::size_t>(k)];
        const std::string prefix = "s" + std::to_string(k) + ".";
        f(prefix + "alpha_raw", s.alpha_raw);
        f(prefix + "mu_raw", s.mu_raw);
        f(prefix + "lambda_raw", s.lambda_raw);
        f(prefix + "lipschitz_raw", s.lipschitz_raw);
        f(prefix + "slope", s.slope);
        f(prefix + "sf_a", s.sf_a);
        f(prefix + "sf_b", s.sf_b);
        f(prefix + "lf_h", s.lf_h);
        f(prefix + "lf_v", s.lf_v);
        f(prefix + "fuse", s.fuse);
        f(prefix + "head_m", s.head_m);
        f(prefix + "head_e", s.head_e);
        f(prefix + "enc1", s.enc1);
        f(prefix + "enc2", s.enc2);
        f(prefix + "mid", s.mid);
        f(prefix + "dec2", s.dec2);
        f(prefix + "dec1", s.dec1);
        f(prefix + "head_b", s.head_b);
        f(prefix + "head_c", s.head_c);
    }
}

}  // namespace

double inverse_softplus(double v) {
    if (!(v > 0.0)) throw std::invalid_argument("inverse_softplus: value must be > 0");
    if (v > 30.0) return v;
    return std::log(std::expm1(v));
}

ParamSet ParamSet::passthrough(int stages, int image_channels, const SolverConfig& cfg) {
    if (stages < 1) throw std::invalid_argument("ParamSet: stages must be >= 1");
    ParamSet ps;
    ps.stages = stages;
    ps.image_channels = image_channels;
    const int f = kFeatureChannels, w = kRefinerWidth, c = image_channels;
    for (int k = 0; k < stages; ++k) {
        StageParams p = stage_shapes(image_channels, cfg);
        p.sf_a = identity_kernel(3, 3, f, f);
        p.sf_b = identity_kernel(3, 3, f, f);
        p.lf_h = identity_kernel(1, 11, f, f);
        p.lf_v = identity_kernel(11, 1, f, f);
        p.fuse = identity_kernel(3, 3, f, f);
        p.enc1 = identity_kernel(3, 3, c + 1, w);
        p.enc2 = identity_kernel(3, 3, w, w);
        p.mid = identity_kernel(3, 3, w, w);
        p.dec2 = identity_kernel(3, 3, w, w);
        p.dec1 = identity_kernel(3, 3, w, w);
        // heads stay zero: the refinement contributes nothing and each stage
        // reduces to the closed forms plus clamping
        ps.stage.push_back(std::move(p));
    }
    return ps;
}

ParamSet ParamSet::random_init(int stages, int image_channels, const SolverConfig& cfg,
                               std::uint64_t seed) {
    if (stages < 1) throw std::invalid_argument("ParamSet: stages must be >= 1");
    ParamSet ps;
    ps.stages = stages;
    ps.image_channels = image_channels;
    const int f = kFeatureChannels, w = kRefinerWidth, c = image_channels;
    SplitMix64 rng(seed);
    for (int k = 0; k < stages; ++k) {
        StageParams p = stage_shapes(image_channels, cfg);
        p.sf_a = random_kernel(rng, 3, 3, f, f, 1.0);
        p.sf_b = random_kernel(rng, 3, 3, f, f, 1.0);
        p.lf_h = random_kernel(rng, 1, 11, f, f, 1.0);
        p.lf_v = random_kernel(rng, 11, 1, f, f, 1.0);
        p.fuse = random_kernel(rng, 3, 3, f, f, 1.0);
        p.head_m = random_kernel(rng, 3, 3, f, 1, 0.25);
        p.head_e = random_kernel(rng, 3, 3, f, 1, 0.25);
        p.enc1 = random_kernel(rng, 3, 3, c + 1, w, 1.0);
        p.enc2 = random_kernel(rng, 3, 3, w, w, 1.0);
        p.mid = random_kernel(rng, 3, 3, w, w, 1.0);
        p.dec2 = random_kernel(rng, 3, 3, w, w, 1.0);
        p.dec1 = random_kernel(rng, 3, 3, w, w, 1.0);
        p.head_b = random_kernel(rng, 3, 3, w, c, 0.25);
        p.head_c = random_kernel(rng, 3, 3, w, c, 0.25);
        ps.stage.push_back(std::move(p));
    }
    return ps;
}

std::size_t ParamSet::parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

void ParamSet::visit(const std::function<void(const std::string&, Tensor&)>& f) {
    visit_impl(*this, f);
}

void ParamSet::visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
    visit_impl(*this, f);
}

std::vector<StageParamVars> register_params(GradTape& tape, const ParamSet& params) {
    std::vector<StageParamVars> out(static_cast<std::size_t>(params.stages));
    for (int k = 0; k < params.stages; ++k) {
        const auto& s = params.stage[static_cast<std::size_t>(k)];
        auto& v = out[static_cast<std::size_t>(k)];
        const std::string prefix = "s" + std::to_string(k) + ".";
        v.alpha_raw = tape.param(s.alpha_raw, prefix + "alpha_raw");
        v.mu_raw = tape.param(s.mu_raw, prefix + "mu_raw");
        v.lambda_raw = tape.param(s.lambda_raw, prefix + "lambda_raw");
        v.lipschitz_raw = tape.param(s.lipschitz_raw, prefix + "lipschitz_raw");
        v.slope = tape.param(s.slope, prefix + "slope");
        v.sf_a = tape.param(s.sf_a, prefix + "sf_a");
        v.sf_b = tape.param(s.sf_b, prefix + "sf_b");
        v.lf_h = tape.param(s.lf_h, prefix + "lf_h");
        v.lf_v = tape.param(s.lf_v, prefix + "lf_v");
        v.fuse = tape.param(s.fuse, prefix + "fuse");
        v.head_m = tape.param(s.head_m, prefix + "head_m");
        v.head_e = tape.param(s.head_e, prefix + "head_e");
        v.enc1 = tape.param(s.enc1, prefix + "enc1");
        v.enc2 = tape.param(s.enc2, prefix + "enc2");
        v.mid = tape.param(s.mid, prefix + "mid");
        v.dec2 = tape.param(s.dec2, prefix + "dec2");
        v.dec1 = tape.param(s.dec1, prefix + "dec1");
        v.head_b = tape.param(s.head_b, prefix + "head_b");
        v.head_c = tape.param(s.head_c, prefix + "head_c");
    }
    return out;
}

SofsVars sofs_stage(GradTape& tape, Var c, Var b_prev, Var m_prev, Var m_prev2, Var features,
                    const StageParamVars& p, const SolverConfig& cfg) {
    const Tensor& cv = tape.value(c);
    if (tape.value(m_prev).height() != cv.height() ||
        tape.value(m_prev).width() != cv.width())
        throw std::invalid_argument("sofs_stage: mask/image shape mismatch");
    const int channels = cv.channels();
    const int f = kFeatureChannels;

    const Var alpha = tape.softplus(p.alpha_raw);
    const Var mu = tape.softplus(p.mu_raw);
    const Var lip = tape.softplus(p.lipschitz_raw);
    const Var alpha_lip = tape.mul(alpha, lip);

    const Var targets_k = tape.mask_targets(m_prev);
    const Var gate_k = tape.mask_gate(m_prev);
    const Var targets_prev = tape.mask_targets(m_prev2);
    const Var gate_prev = tape.mask_gate(m_prev2);

    const Var q_d = tape.mul(gate_prev, targets_prev);
    const Var r_prev = tape.sub(tape.mul(gate_prev, m_prev), q_d);

    // learnable l1 gradient: slope * r / sqrt(r^2 + eps^2)
    const double eps2 = cfg.eps_l1 * cfg.eps_l1;
    const Var denom = tape.sqrt(tape.affine(tape.square(r_prev), 1.0, eps2));
    const Var grad_prev = tape.mul(tape.safe_div(r_prev, denom), p.slope);

    // per-pixel channel sums of C^2 and C*B
    const Var c2 = tape.affine(tape.channel_mean(tape.square(c)), channels, 0.0);
    const Var cb = tape.affine(tape.channel_mean(tape.mul(c, b_prev)), channels, 0.0);

    const Var gate_sq = tape.square(gate_k);
    const Var gate_coef = cfg.qa_no_alpha ? lip : alpha_lip;
    const Var qa = tape.add(tape.add(c2, tape.mul(gate_coef, gate_sq)), mu);

    // Qb*M_prev + Qc with the q_d terms cancelled (gate_prev*M_prev folds
    // into r_prev + q_d)
    Var num = tape.mul(mu, m_prev);
    num = tape.add(num, tape.sub(c2, cb));
    num = tape.add(num, tape.mul(alpha_lip, tape.mul(gate_k, r_prev)));
    num = tape.add(num, tape.mul(alpha_lip, tape.mul(gate_sq, targets_k)));
    num = tape.sub(num, tape.mul(alpha, tape.mul(gate_k, grad_prev)));

    SofsVars out;
    out.m_hat = tape.safe_div(num, qa);

    // dual-field refinement over the fixed features
    const Var t_s = tape.add(tape.mul(features, out.m_hat), features);
    const Var ratio = tape.channel_mean(tape.safe_div(b_prev, c));
    const Var t_l = tape.add(tape.mul(features, ratio), features);

    const Var sf = tape.conv2d(tape.tanh(tape.conv2d(t_s, p.sf_a, f)), p.sf_b, f);
    const Var lf = tape.conv2d(tape.tanh(tape.conv2d(t_l, p.lf_h, f)), p.lf_v, f);
    const Var fused = tape.tanh(tape.conv2d(tape.add(sf, lf), p.fuse, f));

    out.m_raw = tape.add(out.m_hat, tape.conv2d(fused, p.head_m, 1));
    out.m = tape.clamp01(out.m_raw);
    out.e_raw = tape.conv2d(fused, p.head_e, 1);
    out.e = tape.clamp01(out.e_raw);
    return out;
}

RobeVars robe_stage(GradTape& tape, Var c, Var b_prev, Var m_k, const StageParamVars& p,
                    const SolverConfig& /*cfg*/) {
    const int channels = tape.value(c).channels();
    const int w = kRefinerWidth;

    const Var lambda = tape.softplus(p.lambda_raw);
    const Var cm = tape.mul(c, m_k);
    const Var reversed = tape.sub(c, cm);
    const Var num = tape.add(tape.mul(lambda, b_prev), reversed);
    RobeVars out;
    out.b_hat = tape.safe_div(num, tape.affine(lambda, 1.0, 1.0));

    const Var in = tape.concat_channels(out.b_hat, m_k);
    const Var e1 = tape.tanh(tape.conv2d(in, p.enc1, w));
    const Var e2 = tape.tanh(tape.conv2d(e1, p.enc2, w));
    const Var mid = tape.tanh(tape.conv2d(e2, p.mid, w));
    const Var d2 = tape.tanh(tape.conv2d(tape.add(mid, e2), p.dec2, w));
    const Var d1 = tape.tanh(tape.conv2d(tape.add(d2, e1), p.dec1, w));

    out.b_raw = tape.add(out.b_hat, tape.conv2d(d1, p.head_b, channels));
    out.b = tape.clamp01(out.b_raw);
    out.c_hat = tape.add(tape.add(cm, out.b), tape.conv2d(d1, p.head_c, channels));
    return out;
}

double stage_weight(int k, int stages) {
    if (k < 1 || k > stages) throw std::invalid_argument("stage_weight: k out of range");
    return std::ldexp(1.0, k - stages);
}

Var weighted_stage_sum(GradTape& tape, const std::vector<Var>& per_stage, int stages) {
    if (static_cast<int>(per_stage.size()) != stages)
        throw std::invalid_argument("weighted_stage_sum: wrong stage count");
    Var acc;
    for (int k = 1; k <= stages; ++k) {
        const Var w = tape.affine(per_stage[static_cast<std::size_t>(k - 1)],
                                  stage_weight(k, stages), 0.0);
        acc = acc.valid() ? tape.add(acc, w) : w;
    }
    return acc;
}

Tensor bce_weight_map(const Tensor& gt) {
    Tensor kernel(15, 15, 1, 1.0 / 225.0);
    const Tensor pooled = ops::conv2d(gt, kernel, 1);
    Tensor out(gt.height(), gt.width(), 1);
    for (std::size_t i = 0; i < gt.size(); ++i)
        out[i] = 1.0 + 5.0 * std::fabs(pooled[i] - gt[i]);
    return out;
}

Tensor derive_edge_gt(const Tensor& gt_s) {
    const int h = gt_s.height(), w = gt_s.width();
    Tensor edge(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double lo = 1e300, hi = -1e300;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const double v = gt_s.at(ops::reflect_index(y + dy, h),
                                             ops::reflect_index(x + dx, w), 0);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            edge.at(y, x, 0) = (hi - lo) > 0.5 ? 1.0 : 0.0;
        }
    return edge;
}

std::pair<double, double> weighted_loss_terms(const Tensor& m, const Tensor& gt) {
    if (!m.same_shape(gt) || m.channels() != 1)
        throw std::invalid_argument("weighted_loss_terms: shape mismatch");
    const Tensor omega = bce_weight_map(gt);
    double wsum = 0.0, bce = 0.0, inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double p = std::min(std::max(m[i], kProbEps), 1.0 - kProbEps);
        const double g = gt[i];
        const double w = omega[i];
        wsum += w;
        bce += w * -(g * std::log(p) + (1.0 - g) * std::log(1.0 - p));
        inter += w * p * g;
        uni += w * (p + g - p * g);
    }
    const double bce_w = bce / wsum;
    const double iou_w = 1.0 - (inter + 1.0) / (uni + 1.0);
    return {bce_w, iou_w};
}

double dice_loss(const Tensor& pred, const Tensor& gt) {
    if (!pred.same_shape(gt))
        throw std::invalid_argument("dice_loss: shape mismatch");
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] * gt[i];
        sp += pred[i];
        sg += gt[i];
    }
    return 1.0 - (2.0 * inter + 1.0) / (sp + sg + 1.0);
}

namespace {

struct StageLossVars {
    Var bce, iou, dice, mse;
};

StageLossVars stage_loss(GradTape& tape, Var m, Var e, Var c_hat, Var c, Var gt, Var gt_e,
                         Var omega, double omega_sum, double gt_e_sum) {
    StageLossVars out;
    const Var mc = tape.clamp(m, kProbEps, 1.0 - kProbEps);

    const Var log_m = tape.log(mc);
    const Var log_1m = tape.log(tape.affine(mc, -1.0, 1.0));
    const Var gt_neg = tape.affine(gt, -1.0, 1.0);
    const Var bce_px =
        tape.affine(tape.add(tape.mul(gt, log_m), tape.mul(gt_neg, log_1m)), -1.0, 0.0);
    out.bce = tape.affine(tape.sum(tape.mul(omega, bce_px)), 1.0 / omega_sum, 0.0);

    const Var mg = tape.mul(mc, gt);
    const Var inter = tape.sum(tape.mul(omega, mg));
    const Var uni = tape.sum(tape.mul(omega, tape.sub(tape.add(mc, gt), mg)));
    const Var ratio = tape.safe_div(tape.affine(inter, 1.0, 1.0), tape.affine(uni, 1.0, 1.0));
    out.iou = tape.affine(ratio, -1.0, 1.0);

    const Var inter_e = tape.sum(tape.mul(e, gt_e));
    const Var dice_ratio = tape.safe_div(tape.affine(inter_e, 2.0, 1.0),
                                         tape.affine(tape.sum(e), 1.0, gt_e_sum + 1.0));
    out.dice = tape.affine(dice_ratio, -1.0, 1.0);

    out.mse = tape.mean(tape.square(tape.sub(c_hat, c)));
    return out;
}

}  // namespace

UnfoldedForward unfolded_forward(GradTape& tape, const Tensor& c, const Tensor& features,
                                 const std::vector<StageParamVars>& params,
                                 const SolverConfig& cfg, const LossTargets* targets,
                                 const Tensor* init_mask) {
    cfg.validate();
    if (static_cast<int>(params.size()) != cfg.stages)
        throw std::invalid_argument("unfolded_forward: expected " +
                                    std::to_string(cfg.stages) + " stage parameter sets, got " +
                                    std::to_string(params.size()));
    if (features.height() != c.height() || features.width() != c.width() ||
        features.channels() != kFeatureChannels)
        throw std::invalid_argument("unfolded_forward: bad feature stack shape");
    if (targets && !targets->gt_s)
        throw std::invalid_argument("unfolded_forward: loss requested without ground truth");

    const Var c_v = tape.constant(c);
    const Var f_v = tape.constant(features);

    Tensor m0(c.height(), c.width(), 1, 0.0);
    if (init_mask) {
        if (init_mask->height() != c.height() || init_mask->width() != c.width() ||
            init_mask->channels() != 1)
            throw std::invalid_argument("unfolded_forward: init mask shape mismatch");
        m0 = *init_mask;
    }
    Var m_prev = tape.constant(m0);
    Var m_prev2 = m_prev;  // M_{-1} reuses M_0
    Var b_prev = tape.constant(Tensor(c.height(), c.width(), c.channels(), 0.0));

    UnfoldedForward out;

    Var gt_v, gt_e_v, omega_v;
    double omega_sum = 0.0, gt_e_sum = 0.0;
    Tensor gt_e_local, omega_local;
    if (targets) {
        const Tensor& gt = *targets->gt_s;
        if (gt.height() != c.height() || gt.width() != c.width() || gt.channels() != 1)
            throw std::invalid_argument("unfolded_forward: ground truth shape mismatch");
        const Tensor* gt_e = targets->gt_e;
        if (!gt_e) {
            gt_e_local = derive_edge_gt(gt);
            gt_e = &gt_e_local;
        }
        const Tensor* omega = targets->omega;
        if (!omega) {
            omega_local = bce_weight_map(gt);
            omega = &omega_local;
        }
        gt_v = tape.constant(gt);
        gt_e_v = tape.constant(*gt_e);
        omega_v = tape.constant(*omega);
        omega_sum = ops::sum(*omega);
        gt_e_sum = ops::sum(*gt_e);
    }

    std::vector<Var> bces, ious, dices, mses;
    for (int k = 1; k <= cfg.stages; ++k) {
        const StageParamVars& p = params[static_cast<std::size_t>(k - 1)];
        StageVars sv;
        sv.sofs = sofs_stage(tape, c_v, b_prev, m_prev, m_prev2, f_v, p, cfg);
        sv.robe = robe_stage(tape, c_v, b_prev, sv.sofs.m, p, cfg);

        if (targets) {
            const StageLossVars sl = stage_loss(tape, sv.sofs.m, sv.sofs.e, sv.robe.c_hat,
                                                c_v, gt_v, gt_e_v, omega_v, omega_sum,
                                                gt_e_sum);
            bces.push_back(sl.bce);
            ious.push_back(sl.iou);
            dices.push_back(sl.dice);
            mses.push_back(sl.mse);
        }

        m_prev2 = m_prev;
        m_prev = sv.sofs.m;
        b_prev = sv.robe.b;
        out.stages.push_back(sv);
    }

    if (targets) {
        const Var bce_acc = weighted_stage_sum(tape, bces, cfg.stages);
        const Var iou_acc = weighted_stage_sum(tape, ious, cfg.stages);
        const Var dice_acc = weighted_stage_sum(tape, dices, cfg.stages);
        const Var mse_acc = weighted_stage_sum(tape, mses, cfg.stages);
        const Var total = tape.add(tape.add(bce_acc, iou_acc), tape.add(dice_acc, mse_acc));
        out.has_loss = true;
        out.loss = LossVars{total, bce_acc, iou_acc, dice_acc, mse_acc};
    }
    return out;
}

UnfoldedResult run_unfolded(const Tensor& c, const ParamSet& params, const SolverConfig& cfg,
                            const Tensor* gt_s, const Tensor* init_mask) {
    GradTape tape;
    const auto pvars = register_params(tape, params);
    const Tensor features = feature_bank(c);
    LossTargets targets;
    targets.gt_s = gt_s;
    const UnfoldedForward fwd = unfolded_forward(tape, c, features, pvars, cfg,
                                                 gt_s ? &targets : nullptr, init_mask);
    UnfoldedResult out;
    for (int k = 1; k <= cfg.stages; ++k) {
        const StageVars& sv = fwd.stages[static_cast<std::size_t>(k - 1)];
        StageState st;
        st.k = k;
        st.m_hat = tape.value(sv.sofs.m_hat);
        st.m = tape.value(sv.sofs.m);
        st.e = tape.value(sv.sofs.e);
        st.b_hat = tape.value(sv.robe.b_hat);
        st.b = tape.value(sv.robe.b);
        st.c_hat = tape.value(sv.robe.c_hat);
        out.stages.push_back(std::move(st));
        out.m_raw.push_back(tape.value(sv.sofs.m_raw));
    }
    if (fwd.has_loss) {
        out.has_loss = true;
        out.loss.loss = tape.value(fwd.loss.total)[0];
        out.loss.bce = tape.value(fwd.loss.bce)[0];
        out.loss.iou_loss = tape.value(fwd.loss.iou)[0];
        out.loss.dice_loss = tape.value(fwd.loss.dice)[0];
        out.loss.mse = tape.value(fwd.loss.mse)[0];
    }
    return out;
}

LossBreakdown evaluate_loss(const std::vector<TrainSample>& dataset, const ParamSet& params,
                            const SolverConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("evaluate_loss: empty dataset");
    LossBreakdown total;
    for (const auto& sample : dataset) {
        const UnfoldedResult r = run_unfolded(sample.image, params, cfg, &sample.gt);
        total.loss += r.loss.loss;
        total.bce += r.loss.bce;
        total.iou_loss += r.loss.iou_loss;
        total.dice_loss += r.loss.dice_loss;
        total.mse += r.loss.mse;
    }
    const double inv = 1.0 / static_cast<double>(dataset.size());
    total.loss *= inv;
    total.bce *= inv;
    total.iou_loss *= inv;
    total.dice_loss *= inv;
    total.mse *= inv;
    return total;
}

TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& tcfg,
                  const SolverConfig& cfg, const ParamSet& init) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (tcfg.steps < 0) throw std::invalid_argument("train: negative step count");
    if (tcfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (init.stages != cfg.stages)
        throw std::invalid_argument("train: parameter set has wrong stage count");

    // per-sample caches: features, edge gt, weight map
    std::vector<Tensor> feats, gt_es, omegas;
    feats.reserve(dataset.size());
    for (const auto& s : dataset) {
        if (s.image.channels() != init.image_channels)
            throw std::invalid_argument("train: sample channel count does not match params");
        feats.push_back(feature_bank(s.image));
        gt_es.push_back(derive_edge_gt(s.gt));
        omegas.push_back(bce_weight_map(s.gt));
    }

    TrainResult result;
    result.params = init;
    result.initial_eval = evaluate_loss(dataset, result.params, cfg);

    // flat views over the parameter tensors, visit order
    std::vector<Tensor*> slots;
    result.params.visit(
        [&](const std::string&, Tensor& t) { slots.push_back(&t); });
    std::vector<std::vector<double>> adam_m(slots.size()), adam_v(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        adam_m[i].assign(slots[i]->size(), 0.0);
        adam_v[i].assign(slots[i]->size(), 0.0);
    }

    SplitMix64 shuffle_rng(mix_seed(tcfg.seed, 0xBA7C4));
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // trigger shuffle on first use
    auto next_index = [&]() {
        if (cursor >= order.size()) {
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1],
                          order[static_cast<std::size_t>(shuffle_rng.uniform_int(
                              static_cast<int>(i)))]);
            cursor = 0;
        }
        return order[cursor++];
    };

    std::vector<Tensor> grad_acc(slots.size());

    for (int step = 1; step <= tcfg.steps; ++step) {
        for (std::size_t i = 0; i < slots.size(); ++i)
            grad_acc[i] = Tensor(slots[i]->height(), slots[i]->width(), slots[i]->channels());

        LossBreakdown batch;
        for (int b = 0; b < tcfg.batch_size; ++b) {
            const std::size_t idx = next_index();
            GradTape tape;
            const auto pvars = register_params(tape, result.params);
            LossTargets targets;
            targets.gt_s = &dataset[idx].gt;
            targets.gt_e = &gt_es[idx];
            targets.omega = &omegas[idx];
            const UnfoldedForward fwd =
                unfolded_forward(tape, dataset[idx].image, feats[idx], pvars, cfg, &targets);
            tape.backward(fwd.loss.total);
            for (std::size_t i = 0; i < slots.size(); ++i) {
                const Tensor& g = tape.param_grad(i);
                for (std::size_t j = 0; j < g.size(); ++j) grad_acc[i][j] += g[j];
            }
            batch.loss += tape.value(fwd.loss.total)[0];
            batch.bce += tape.value(fwd.loss.bce)[0];
            batch.iou_loss += tape.value(fwd.loss.iou)[0];
            batch.dice_loss += tape.value(fwd.loss.dice)[0];
            batch.mse += tape.value(fwd.loss.mse)[0];
        }
        const double inv_batch = 1.0 / tcfg.batch_size;
        batch.loss *= inv_batch;
        batch.bce *= inv_batch;
        batch.iou_loss *= inv_batch;
        batch.dice_loss *= inv_batch;
        batch.mse *= inv_batch;

        const double bc1 = 1.0 - std::pow(tcfg.beta1, step);
        const double bc2 = 1.0 - std::pow(tcfg.beta2, step);
        for (std::size_t i = 0; i < slots.size(); ++i) {
            Tensor& p = *slots[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double g = grad_acc[i][j] * inv_batch;
                adam_m[i][j] = tcfg.beta1 * adam_m[i][j] + (1.0 - tcfg.beta1) * g;
                adam_v[i][j] = tcfg.beta2 * adam_v[i][j] + (1.0 - tcfg.beta2) * g * g;
                const double mhat = adam_m[i][j] / bc1;
                const double vhat = adam_v[i][j] / bc2;
                p[j] -= tcfg.lr * mhat / (std::sqrt(vhat) + tcfg.adam_eps);
            }
        }
        result.curve.push_back(TrainCurvePoint{step, batch});
    }

    result.final_eval = evaluate_loss(dataset, result.params, cfg);
    return result;
}

// ---- checkpoints ----

namespace {

std::uint64_t fnv1a_bytes(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::string body;
    body += "unfoldseg-ckpt 1\n";
    body += "stages " + std::to_string(params.stages) + "\n";
    body += "channels " + std::to_string(params.image_channels) + "\n";
    std::size_t count = 0;
    params.visit([&](const std::string&, const Tensor&) { ++count; });
    body += "tensors " + std::to_string(count) + "\n";
    params.visit([&](const std::string& name, const Tensor& t) {
        body += "tensor " + name + " " + std::to_string(t.height()) + " " +
                std::to_string(t.width()) + " " + std::to_string(t.channels()) + "\n";
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (i) body += ' ';
            body += fmt_double(t[i]);
        }
        body += '\n';
    });
    body += "checksum " + to_hex(fnv1a_bytes(body)) + "\n";
    write_file(path, body);
}

ParamSet load_checkpoint(const std::string& path) {
    const std::string text = read_file(path);
    const std::size_t mark = text.rfind("checksum ");
    if (mark == std::string::npos)
        throw std::runtime_error("checkpoint " + path + ": missing checksum line");
    std::uint64_t stored = 0;
    {
        std::istringstream tail(text.substr(mark));
        std::string word, hex;
        tail >> word >> hex;
        if (!parse_hex_u64(hex, stored))
            throw std::runtime_error("checkpoint " + path + ": bad checksum field");
    }
    if (fnv1a_bytes(text.substr(0, mark)) != stored)
        throw std::runtime_error("checkpoint " + path + ": checksum mismatch");

    std::istringstream in(text.substr(0, mark));
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "unfoldseg-ckpt" || version != 1)
        throw std::runtime_error("checkpoint " + path + ": unknown format/version");
    std::string key;
    int stages = 0, channels = 0;
    std::size_t count = 0;
    in >> key >> stages;
    if (key != "stages" || stages < 1)
        throw std::runtime_error("checkpoint " + path + ": bad stages header");
    in >> key >> channels;
    if (key != "channels" || (channels != 1 && channels != 3))
        throw std::runtime_error("checkpoint " + path + ": bad channels header");
    in >> key >> count;
    if (key != "tensors") throw std::runtime_error("checkpoint " + path + ": bad tensor count");

    std::map<std::string, Tensor> loaded;
    for (std::size_t t = 0; t < count; ++t) {
        std::string name;
        int h = 0, w = 0, c = 0;
        in >> key >> name >> h >> w >> c;
        if (key != "tensor" || h < 1 || w < 1 || c < 1)
            throw std::runtime_error("checkpoint " + path + ": bad tensor header #" +
                                     std::to_string(t));
        Tensor tensor(h, w, c);
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            std::string tok;
            if (!(in >> tok))
                throw std::runtime_error("checkpoint " + path + ": truncated tensor " + name);
            double v = 0.0;
            if (!parse_double(tok, v))
                throw std::runtime_error("checkpoint " + path + ": bad value in " + name);
            tensor[i] = v;
        }
        loaded.emplace(name, std::move(tensor));
    }

    ParamSet params = ParamSet::passthrough(stages, channels, SolverConfig{});
    std::size_t assigned = 0;
    params.visit([&](const std::string& name, Tensor& t) {
        auto it = loaded.find(name);
        if (it == loaded.end())
            throw std::runtime_error("checkpoint " + path + ": missing tensor " + name);
        if (!it->second.same_shape(t))
            throw std::runtime_error("checkpoint " + path + ": shape mismatch for " + name);
        t = it->second;
        ++assigned;
    });
    if (assigned != loaded.size())
        throw std::runtime_error("checkpoint " + path + ": unexpected extra tensors");
    return params;
}

}  // namespace unfoldseg
