#include "unfoldseg/trace.hpp"

#include "unfoldseg/image_io.hpp"
#include "unfoldseg/metrics.hpp"
#include "unfoldseg/textio.hpp"

namespace unfoldseg {

std::string render_solve_trace(const SolveResult& result, const Tensor* gt,
                               double threshold) {
    std::string out = "stage,data_energy,sparsity_energy,surrogate_before,surrogate_after,mae,iou\n";
    for (std::size_t i = 0; i < result.stages.size(); ++i) {
        const StageTrace& t = result.trace[i];
        out += std::to_string(result.stages[i].k);
        out += ',';
        out += fmt_double(t.data_energy);
        out += ',';
        out += fmt_double(t.sparsity_energy);
        out += ',';
        out += fmt_double(t.surrogate_before);
        out += ',';
        out += fmt_double(t.surrogate_after);
        out += ',';
        if (gt) {
            const Tensor& m = result.stages[i].m;
            out += fmt_double(mae(m, *gt));
            out += ',';
            out += fmt_double(iou(ops::threshold(m, threshold), *gt));
        } else {
            out += "nan,nan";
        }
        out += '\n';
    }
    return out;
}

std::string render_train_trace(const std::vector<TrainCurvePoint>& curve) {
    std::string out = "step,loss,bce,iou_loss,dice,mse\n";
    for (const TrainCurvePoint& p : curve) {
        out += std::to_string(p.step);
        out += ',';
        out += fmt_double(p.loss.loss);
        out += ',';
        out += fmt_double(p.loss.bce);
        out += ',';
        out += fmt_double(p.loss.iou_loss);
        out += ',';
        out += fmt_double(p.loss.dice_loss);
        out += ',';
        out += fmt_double(p.loss.mse);
        out += '\n';
    }
    return out;
}

void emit_trace(const std::string& path, const std::string& csv) { write_file(path, csv); }

}  // namespace unfoldseg
