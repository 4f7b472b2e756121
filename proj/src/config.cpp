#include "unfoldseg/config.hpp"

#include <map>
#include <sstream>
#include <stdexcept>

#include "unfoldseg/image_io.hpp"
#include "unfoldseg/textio.hpp"

namespace unfoldseg {

bool RunConfig::operator==(const RunConfig& other) const {
    const auto& a = solver;
    const auto& b = other.solver;
    const auto& t = training;
    const auto& u = other.training;
    return mode == other.mode && paths == other.paths && a.alpha == b.alpha && a.mu == b.mu &&
           a.lambda == b.lambda && a.lipschitz == b.lipschitz && a.eps_l1 == b.eps_l1 &&
           a.stages == b.stages && a.qa_no_alpha == b.qa_no_alpha &&
           a.mask_prox == b.mask_prox && a.background_prox == b.background_prox &&
           a.tv_weight == b.tv_weight && a.threshold == b.threshold && t.steps == u.steps &&
           t.lr == u.lr && t.batch_size == u.batch_size && t.seed == u.seed;
}

// The key table is spelled out with macros kept local to this file; each
// entry defines how to parse and how to render one field.
namespace {

struct Entry {
    const char* key;
    bool (*set)(RunConfig&, const std::string&);
    std::string (*get)(const RunConfig&);
};

bool set_mode(RunConfig& c, const std::string& v) {
    if (v != "solve" && v != "train" && v != "eval" && v != "synth") return false;
    c.mode = v;
    return true;
}

bool set_mask_prox(RunConfig& c, const std::string& v) {
    if (v == "clamp") c.solver.mask_prox = MaskProx::kClamp;
    else if (v == "clamp+tv") c.solver.mask_prox = MaskProx::kClampTv;
    else return false;
    return true;
}

bool set_background_prox(RunConfig& c, const std::string& v) {
    if (v == "clamp") c.solver.background_prox = BackgroundProx::kClamp;
    else if (v == "gaussian") c.solver.background_prox = BackgroundProx::kGaussian;
    else return false;
    return true;
}

bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1") { out = true; return true; }
    if (v == "false" || v == "0") { out = false; return true; }
    return false;
}

#define DOUBLE_FIELD(KEY, REF)                                                       \
    Entry{KEY, [](RunConfig& c, const std::string& v) { return parse_double(v, c.REF); }, \
          [](const RunConfig& c) { return fmt_double(c.REF); }}

#define INT_FIELD(KEY, REF)                                                      \
    Entry{KEY,                                                                   \
          [](RunConfig& c, const std::string& v) {                               \
              long long x;                                                       \
              if (!parse_int(v, x)) return false;                                \
              c.REF = static_cast<int>(x);                                       \
              return true;                                                       \
          },                                                                     \
          [](const RunConfig& c) { return std::to_string(c.REF); }}

#define U64_FIELD(KEY, REF)                                                     \
    Entry{KEY,                                                                  \
          [](RunConfig& c, const std::string& v) { return parse_u64(v, c.REF); }, \
          [](const RunConfig& c) { return std::to_string(c.REF); }}

#define BOOL_FIELD(KEY, REF)                                                    \
    Entry{KEY,                                                                  \
          [](RunConfig& c, const std::string& v) { return parse_bool(v, c.REF); }, \
          [](const RunConfig& c) { return std::string(c.REF ? "true" : "false"); }}

#define STRING_FIELD(KEY, REF)                                 \
    Entry{KEY,                                                 \
          [](RunConfig& c, const std::string& v) {             \
              c.REF = v;                                       \
              return true;                                     \
          },                                                   \
          [](const RunConfig& c) { return c.REF; }}

const Entry kEntries[] = {
    Entry{"mode", set_mode, [](const RunConfig& c) { return c.mode; }},
    DOUBLE_FIELD("solver.alpha", solver.alpha),
    DOUBLE_FIELD("solver.mu", solver.mu),
    DOUBLE_FIELD("solver.lambda", solver.lambda),
    DOUBLE_FIELD("solver.lipschitz", solver.lipschitz),
    DOUBLE_FIELD("solver.eps_l1", solver.eps_l1),
    INT_FIELD("solver.stages", solver.stages),
    BOOL_FIELD("solver.qa_no_alpha", solver.qa_no_alpha),
    Entry{"solver.prox_mask", set_mask_prox,
          [](const RunConfig& c) -> std::string {
              return c.solver.mask_prox == MaskProx::kClamp ? "clamp" : "clamp+tv";
          }},
    Entry{"solver.prox_background", set_background_prox,
          [](const RunConfig& c) -> std::string {
              return c.solver.background_prox == BackgroundProx::kClamp ? "clamp" : "gaussian";
          }},
    DOUBLE_FIELD("solver.tv_weight", solver.tv_weight),
    DOUBLE_FIELD("solver.threshold", solver.threshold),
    INT_FIELD("training.steps", training.steps),
    DOUBLE_FIELD("training.lr", training.lr),
    INT_FIELD("training.batch_size", training.batch_size),
    U64_FIELD("training.seed", training.seed),
    STRING_FIELD("paths.input", paths.input),
    STRING_FIELD("paths.output", paths.output),
    STRING_FIELD("paths.checkpoint", paths.checkpoint),
    STRING_FIELD("paths.manifest", paths.manifest),
};

#undef DOUBLE_FIELD
#undef INT_FIELD
#undef U64_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

const Entry* find_entry(const std::string& key) {
    for (const Entry& e : kEntries)
        if (key == e.key) return &e;
    return nullptr;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::map<std::string, int> seen;
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected 'key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        const Entry* entry = find_entry(key);
        if (!entry)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": unknown key '" + key + "'");
        if (seen.count(key))
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": duplicate key '" + key + "' (first at line " +
                                        std::to_string(seen[key]) + ")");
        seen[key] = lineno;
        if (!entry->set(cfg, value))
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": type mismatch for key '" + key + "' (value '" +
                                        value + "')");
    }
    return cfg;
}

std::string render_config(const RunConfig& cfg) {
    std::string out;
    for (const Entry& e : kEntries) {
        out += e.key;
        out += " = ";
        out += e.get(cfg);
        out += '\n';
    }
    return out;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

}  // namespace unfoldseg
