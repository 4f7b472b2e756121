#pragma once

#include <string>

#include "unfoldseg/model.hpp"
#include "unfoldseg/unfolded.hpp"

namespace unfoldseg {

/// All run settings: the mode, solver weights, training schedule, and file
/// paths. Every field has a default; the config grammar is `key = value`
/// lines with `#` comments and dotted keys (e.g. solver.alpha).
struct RunConfig {
    std::string mode = "solve";  // solve | train | eval | synth
    SolverConfig solver;
    TrainConfig training;
    struct Paths {
        std::string input, output, checkpoint, manifest;
        bool operator==(const Paths&) const = default;
    } paths;

    bool operator==(const RunConfig& other) const;
};

/// Parses config text. Unknown keys, duplicate keys, and type mismatches
/// are errors naming the offending key; missing keys keep their defaults.
RunConfig parse_config(const std::string& text);

/// Canonical rendering with every key present; parse_config(render_config(c))
/// reproduces c exactly.
std::string render_config(const RunConfig& cfg);

RunConfig load_config(const std::string& path);

}  // namespace unfoldseg
