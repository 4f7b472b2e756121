#include "unfoldseg/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "unfoldseg/image_io.hpp"
#include "unfoldseg/rng.hpp"
#include "unfoldseg/textio.hpp"

namespace unfoldseg {

namespace {

constexpr double kTextureAmp = 0.015;
constexpr std::uint64_t kScaleSalt = 0x5CA1E;

struct EllipseRegion {
    double cx, cy, a, b;
    bool contains(double x, double y) const {
        const double dx = (x - cx) / a, dy = (y - cy) / b;
        return dx * dx + dy * dy <= 1.0;
    }
};

// Axis-aligned ellipse whose area fraction equals scale^2 of the image.
EllipseRegion draw_ellipse(SplitMix64& rng, int size, double scale) {
    EllipseRegion e;
    e.cx = size * (0.5 + 0.1 * (rng.u01() - 0.5));
    e.cy = size * (0.5 + 0.1 * (rng.u01() - 0.5));
    const double aspect = rng.range(0.75, 4.0 / 3.0);
    const double root = scale * size / std::sqrt(std::acos(-1.0));
    e.a = root * std::sqrt(aspect);
    e.b = root / std::sqrt(aspect);
    return e;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Seeded lattice noise in [-1, 1]: bilinear interpolation of lattice values
// drawn in row-major order, two octaves.
struct ValueNoise {
    int cell1, cell2;
    int n1x, n1y, n2x, n2y;
    std::vector<double> l1, l2;

    ValueNoise(SplitMix64& rng, int size) {
        cell1 = std::max(4, size / 8);
        cell2 = std::max(8, size / 4);
        n1x = size / cell1 + 2;
        n1y = n1x;
        n2x = size / cell2 + 2;
        n2y = n2x;
        l1.resize(static_cast<std::size_t>(n1x) * n1y);
        l2.resize(static_cast<std::size_t>(n2x) * n2y);
        for (auto& v : l1) v = 2.0 * rng.u01() - 1.0;
        for (auto& v : l2) v = 2.0 * rng.u01() - 1.0;
    }

    static double sample(const std::vector<double>& l, int nx, int ny, int cell, int x, int y) {
        const int ix = x / cell, iy = y / cell;
        const double fx = smoothstep(static_cast<double>(x % cell) / cell);
        const double fy = smoothstep(static_cast<double>(y % cell) / cell);
        auto at = [&](int i, int j) {
            return l[static_cast<std::size_t>(std::min(j, ny - 1)) * nx + std::min(i, nx - 1)];
        };
        const double top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
        const double bot = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
        return top * (1.0 - fy) + bot * fy;
    }

    double operator()(int x, int y) const {
        return 0.65 * sample(l1, n1x, n1y, cell1, x, y) +
               0.35 * sample(l2, n2x, n2y, cell2, x, y);
    }
};

struct Stripes {
    int dx, dy, period, phase;
    Stripes(SplitMix64& rng, int /*size*/) {
        static const int dirs[5][2] = {{1, 0}, {0, 1}, {1, 1}, {2, 1}, {1, 2}};
        const int d = rng.uniform_int(5);
        dx = dirs[d][0];
        dy = dirs[d][1];
        period = 6 + rng.uniform_int(7);
        phase = rng.uniform_int(period);
    }
    // Integer-exact triangle wave in [-1, 1].
    double operator()(int x, int y) const {
        const int t = (dx * x + dy * y + phase) % period;
        const double u = static_cast<double>(t) / period;
        return 4.0 * std::fabs(u - 0.5) - 1.0;
    }
};

}  // namespace

Scene generate(const SceneSpec& spec) {
    if (spec.size < 8) throw std::invalid_argument("generate: size must be >= 8");
    if (!(spec.scale > 0.0 && spec.scale < 1.0))
        throw std::invalid_argument("generate: scale must lie in (0, 1)");
    if (!(spec.delta >= 0.0 && spec.delta <= 0.5))
        throw std::invalid_argument("generate: delta must lie in [0, 0.5]");
    if (spec.sigma < 0.0) throw std::invalid_argument("generate: sigma must be >= 0");

    SplitMix64 rng(spec.seed);
    const int size = spec.size;
    const double bg_base = 0.50 + 0.04 * rng.u01();

    // Region construction; draws are consumed in a fixed order regardless of
    // which branch runs.
    std::vector<EllipseRegion> region;
    bool is_annulus = false;
    EllipseRegion hole{};
    switch (spec.shape) {
    case SceneShape::kEllipse:
        region.push_back(draw_ellipse(rng, size, spec.scale));
        break;
    case SceneShape::kBlob: {
        EllipseRegion main = draw_ellipse(rng, size, spec.scale * std::sqrt(0.72));
        region.push_back(main);
        for (int i = 0; i < 3; ++i) {
            EllipseRegion sat = draw_ellipse(rng, size, spec.scale * std::sqrt(0.28 / 3.0));
            sat.cx = main.cx + main.a * rng.range(-0.9, 0.9);
            sat.cy = main.cy + main.b * rng.range(-0.9, 0.9);
            region.push_back(sat);
        }
        break;
    }
    case SceneShape::kAnnulus: {
        EllipseRegion outer = draw_ellipse(rng, size, spec.scale / std::sqrt(1.0 - 0.3025));
        region.push_back(outer);
        hole = outer;
        hole.a *= 0.55;
        hole.b *= 0.55;
        is_annulus = true;
        break;
    }
    }

    Tensor gt(size, size, 1);
    int area = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            bool inside = false;
            for (const auto& e : region)
                if (e.contains(px, py)) { inside = true; break; }
            if (is_annulus && hole.contains(px, py)) inside = false;
            if (inside) {
                gt.at(y, x, 0) = 1.0;
                ++area;
            }
        }
    if (area == 0) throw std::invalid_argument("generate: object scale produces empty region");

    Tensor image(size, size, 1);
    std::optional<ValueNoise> noise;
    std::optional<Stripes> stripes;
    if (spec.texture == SceneTexture::kValueNoise) noise.emplace(rng, size);
    else if (spec.texture == SceneTexture::kStripes) stripes.emplace(rng, size);

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double v = bg_base;
            if (noise) v += kTextureAmp * (*noise)(x, y);
            if (stripes) v += kTextureAmp * (*stripes)(x, y);
            if (gt.at(y, x, 0) > 0.5) v += spec.delta;
            if (spec.sigma > 0.0) v += spec.sigma * rng.gauss();
            image.at(y, x, 0) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        }

    return Scene{std::move(image), std::move(gt)};
}

const char* to_string(SceneShape s) {
    switch (s) {
    case SceneShape::kEllipse: return "ellipse";
    case SceneShape::kBlob: return "blob";
    case SceneShape::kAnnulus: return "annulus";
    }
    return "?";
}

const char* to_string(SceneTexture t) {
    switch (t) {
    case SceneTexture::kFlat: return "flat";
    case SceneTexture::kValueNoise: return "noise";
    case SceneTexture::kStripes: return "stripes";
    }
    return "?";
}

const char* to_string(Difficulty d) {
    switch (d) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kMedium: return "medium";
    case Difficulty::kHard: return "hard";
    }
    return "?";
}

void difficulty_band(Difficulty d, double& delta, double& sigma) {
    switch (d) {
    case Difficulty::kEasy: delta = 0.35; sigma = 0.01; return;
    case Difficulty::kMedium: delta = 0.2; sigma = 0.03; return;
    case Difficulty::kHard: delta = 0.1; sigma = 0.05; return;
    }
}

SceneSpec suite_scene_spec(int index, Difficulty d, std::uint64_t seed, int size) {
    SceneSpec spec;
    spec.seed = mix_seed(seed, static_cast<std::uint64_t>(index));
    spec.size = size;
    spec.shape = static_cast<SceneShape>(index % 3);
    spec.texture = static_cast<SceneTexture>((index / 3) % 3);
    difficulty_band(d, spec.delta, spec.sigma);
    SplitMix64 scale_rng(mix_seed(spec.seed, kScaleSalt));
    spec.scale = scale_rng.range(0.30, 0.55);
    return spec;
}

namespace {

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool shape_from_string(const std::string& s, SceneShape& out) {
    if (s == "ellipse") { out = SceneShape::kEllipse; return true; }
    if (s == "blob") { out = SceneShape::kBlob; return true; }
    if (s == "annulus") { out = SceneShape::kAnnulus; return true; }
    return false;
}

bool texture_from_string(const std::string& s, SceneTexture& out) {
    if (s == "flat") { out = SceneTexture::kFlat; return true; }
    if (s == "noise") { out = SceneTexture::kValueNoise; return true; }
    if (s == "stripes") { out = SceneTexture::kStripes; return true; }
    return false;
}

}  // namespace

std::string gt_path_for(const std::string& image_path) {
    const std::size_t dot = image_path.rfind('.');
    if (dot == std::string::npos) return image_path + "_gt";
    return image_path.substr(0, dot) + "_gt" + image_path.substr(dot);
}

std::uint64_t scene_checksum(const Scene& scene) {
    const std::string img = render_netpbm(scene.image, true);
    const std::string msk = render_netpbm(scene.gt, true);
    return fnv1a(msk, fnv1a(img));
}

std::vector<SuiteEntry> make_suite(int n, Difficulty d, std::uint64_t seed,
                                   const std::string& out_dir, int size) {
    if (n < 1) throw std::invalid_argument("make_suite: n must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("make_suite: cannot create directory " + out_dir);

    std::vector<SuiteEntry> entries;
    std::string manifest;
    for (int i = 0; i < n; ++i) {
        SuiteEntry entry;
        entry.spec = suite_scene_spec(i, d, seed, size);
        const Scene scene = generate(entry.spec);

        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d.pgm", i);
        entry.image_path = name;
        const std::string img_full = out_dir + "/" + entry.image_path;
        save_image(img_full, scene.image, true);
        save_mask(out_dir + "/" + gt_path_for(entry.image_path), scene.gt, true);
        entry.checksum = scene_checksum(scene);

        manifest += entry.image_path;
        manifest += '\t';
        manifest += std::to_string(entry.spec.seed);
        manifest += '\t';
        manifest += to_string(entry.spec.shape);
        manifest += '\t';
        manifest += to_string(entry.spec.texture);
        manifest += '\t';
        manifest += fmt_double(entry.spec.delta);
        manifest += '\t';
        manifest += fmt_double(entry.spec.sigma);
        manifest += '\t';
        manifest += to_hex(entry.checksum);
        manifest += '\n';
        entries.push_back(std::move(entry));
    }
    write_file(out_dir + "/manifest.tsv", manifest);
    return entries;
}

std::vector<SuiteEntry> load_manifest(const std::string& manifest_path) {
    const std::string text = read_file(manifest_path);
    std::vector<SuiteEntry> entries;
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                cols.push_back(line.substr(start));
                break;
            }
            cols.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (cols.size() != 7)
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": expected 7 tab-separated fields, got " +
                                     std::to_string(cols.size()));
        SuiteEntry e;
        e.image_path = cols[0];
        if (!parse_u64(cols[1], e.spec.seed))
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": bad seed");
        if (!shape_from_string(cols[2], e.spec.shape))
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": bad shape");
        if (!texture_from_string(cols[3], e.spec.texture))
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": bad texture");
        if (!parse_double(cols[4], e.spec.delta) || !parse_double(cols[5], e.spec.sigma))
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": bad delta/sigma");
        if (!parse_hex_u64(cols[6], e.checksum))
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": bad checksum");
        SplitMix64 scale_rng(mix_seed(e.spec.seed, kScaleSalt));
        e.spec.scale = scale_rng.range(0.30, 0.55);
        e.spec.size = 0;  // recovered from the image file by consumers
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace unfoldseg
