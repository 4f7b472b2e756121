#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unfoldseg/tensor.hpp"

namespace unfoldseg {

enum class SceneShape { kEllipse, kBlob, kAnnulus };
enum class SceneTexture { kFlat, kValueNoise, kStripes };

/// Recipe for one concealed scene. The same spec always regenerates a
/// bit-identical image/mask pair.
struct SceneSpec {
    std::uint64_t seed = 0;
    int size = 64;                               // square image side
    SceneShape shape = SceneShape::kEllipse;
    SceneTexture texture = SceneTexture::kFlat;
    double delta = 0.2;    // foreground intensity offset, in [0, 0.5]
    double sigma = 0.0;    // additive noise level
    double scale = 0.4;    // object scale fraction of the image side, in (0, 1)
};

struct Scene {
    Tensor image;  // grayscale in [0, 1]
    Tensor gt;     // binary region indicator
};

/// Renders the scene: a seeded background texture, the same texture lifted
/// by delta inside the object region, then clamped additive noise. The
/// ground truth is the exact indicator of the region.
/// Throws std::invalid_argument for invalid specs or an empty region.
Scene generate(const SceneSpec& spec);

enum class Difficulty { kEasy, kMedium, kHard };

const char* to_string(SceneShape s);
const char* to_string(SceneTexture t);
const char* to_string(Difficulty d);

/// (delta, sigma) band for a difficulty level:
/// easy = (0.35, 0.01), medium = (0.2, 0.03), hard = (0.1, 0.05).
void difficulty_band(Difficulty d, double& delta, double& sigma);

/// The full derivation of scene i of a suite; exposed so manifests can be
/// regenerated and checked entry by entry.
SceneSpec suite_scene_spec(int index, Difficulty d, std::uint64_t seed, int size);

struct SuiteEntry {
    std::string image_path;  // relative to the manifest directory
    SceneSpec spec;
    std::uint64_t checksum = 0;  // FNV-1a 64 over image bytes then gt bytes
};

/// Ground-truth file name corresponding to an image file name.
std::string gt_path_for(const std::string& image_path);

/// FNV-1a 64 over the serialized image followed by the serialized mask.
std::uint64_t scene_checksum(const Scene& scene);

/// Generates n scenes into out_dir and writes `manifest.tsv` with one line
/// per scene: path<TAB>seed<TAB>shape<TAB>texture<TAB>delta<TAB>sigma<TAB>checksum.
std::vector<SuiteEntry> make_suite(int n, Difficulty d, std::uint64_t seed,
                                   const std::string& out_dir, int size = 64);

/// Reads a manifest written by make_suite. Paths stay relative.
std::vector<SuiteEntry> load_manifest(const std::string& manifest_path);

}  // namespace unfoldseg
