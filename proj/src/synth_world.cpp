#include "read/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "read/util.hpp"

namespace readcore {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t tile_key(const TileId& t) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.z)) << 58) ^
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.x)) << 29) ^
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.y));
}

// Smooth periodic field over world coordinates (u, v) ∈ [0,1]², squashed
// into (0,1). Wave table drawn once from the stream-id fork of the seed.
struct WaveField {
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;

    WaveField(std::uint64_t seed, std::uint64_t stream) {
        Rng rng(mix_seed(seed, stream));
        for (int i = 0; i < 4; ++i) {
            Wave w;
            w.fx = static_cast<double>(1 + rng.next_int(3));
            w.fy = static_cast<double>(1 + rng.next_int(3));
            w.phase = rng.next_double() * 2.0 * kPi;
            w.amp = 1.0 / static_cast<double>(i + 1);
            waves.push_back(w);
        }
    }

    double operator()(double u, double v) const {
        double raw = 0.0;
        for (const auto& w : waves) raw += w.amp * std::cos(2.0 * kPi * (w.fx * u + w.fy * v) + w.phase);
        return 1.0 / (1.0 + std::exp(-1.5 * raw));
    }
};

std::string district_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "D%03d", index);
    return buf;
}

void fill_rect(Image& img, int y0, int x0, int h, int w, float r, float g, float b) {
    for (int y = std::max(0, y0); y < std::min(img.h, y0 + h); ++y)
        for (int x = std::max(0, x0); x < std::min(img.w, x0 + w); ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
}

}  // namespace

void SynthWorldSpec::validate() const {
    if (zoom < 0 || zoom > 22) throw config_error("synth world: zoom out of range");
    if (districts_x < 1 || districts_y < 1 || tiles_x < 1 || tiles_y < 1)
        throw config_error("synth world: grid extents must be positive");
    if (tile_px < 8) throw config_error("synth world: tile_px must be ≥ 8");
    if (uninhabited_fraction < 0.0 || uninhabited_fraction > 1.0)
        throw config_error("synth world: uninhabited_fraction must be in [0,1]");
    if (label_fraction < 0.0 || label_fraction > 1.0)
        throw config_error("synth world: label_fraction must be in [0,1]");
    if (vote_noise < 0.0 || vote_noise > 1.0)
        throw config_error("synth world: vote_noise must be in [0,1]");
    if (votes_per_tile < 1) throw config_error("synth world: votes_per_tile must be ≥ 1");
    if (noise_sd < 0.0) throw config_error("synth world: noise_sd must be ≥ 0");
    const long long side = 1LL << zoom;
    if (origin_x < 0 || origin_y < 0 ||
        static_cast<long long>(origin_x) + world_tiles_x() > side ||
        static_cast<long long>(origin_y) + world_tiles_y() > side)
        throw config_error("synth world: grid does not fit inside the zoom level");
}

SynthWorld make_synth_world(const SynthWorldSpec& spec) {
    spec.validate();
    SynthWorld world;
    world.spec = spec;

    const WaveField urban_field(spec.seed, 0xF1E1Du);
    const WaveField water_field(spec.seed, 0xA77E2u);
    const double wx = spec.world_tiles_x(), wy = spec.world_tiles_y();

    // Plant the uninhabited mask by thresholding the water field at its
    // empirical quantile, so the share is exact up to rounding.
    const std::size_t total_tiles =
        static_cast<std::size_t>(spec.world_tiles_x()) * static_cast<std::size_t>(spec.world_tiles_y());
    std::vector<double> water(total_tiles);
    for (int ty = 0; ty < spec.world_tiles_y(); ++ty)
        for (int tx = 0; tx < spec.world_tiles_x(); ++tx) {
            const double u = (tx + 0.5) / wx, v = (ty + 0.5) / wy;
            water[static_cast<std::size_t>(ty) * static_cast<std::size_t>(spec.world_tiles_x()) +
                  static_cast<std::size_t>(tx)] = water_field(u, v);
        }
    const std::size_t n_water = static_cast<std::size_t>(
        std::llround(spec.uninhabited_fraction * static_cast<double>(total_tiles)));
    std::vector<double> sorted = water;
    std::sort(sorted.begin(), sorted.end());
    const double water_cut = n_water == 0 ? -1.0 : sorted[n_water - 1];  // value ≤ cut → water
    std::size_t planted = 0;

    Rng noise_rng(mix_seed(spec.seed, 0xDEA1u));
    std::vector<double> log_density;

    for (int dy = 0; dy < spec.districts_y; ++dy)
        for (int dx = 0; dx < spec.districts_x; ++dx) {
            const int index = dy * spec.districts_x + dx;
            SynthDistrict d;
            d.district_id = district_name(index);
            const int x0 = spec.origin_x + dx * spec.tiles_x;
            const int y0 = spec.origin_y + dy * spec.tiles_y;

            double sum_inhabited = 0.0, sum_all = 0.0;
            std::size_t n_inhabited = 0;
            for (int ry = 0; ry < spec.tiles_y; ++ry)
                for (int rx = 0; rx < spec.tiles_x; ++rx) {
                    SynthTile st;
                    st.tile = TileId{x0 + rx, y0 + ry, spec.zoom};
                    const int gx = dx * spec.tiles_x + rx, gy = dy * spec.tiles_y + ry;
                    const double u = (gx + 0.5) / wx, v = (gy + 0.5) / wy;
                    st.field = urban_field(u, v);
                    const double wv =
                        water[static_cast<std::size_t>(gy) *
                                  static_cast<std::size_t>(spec.world_tiles_x()) +
                              static_cast<std::size_t>(gx)];
                    if (wv <= water_cut) {
                        st.klass = TileClass::uninhabited;
                        ++planted;
                    } else {
                        st.klass = st.field >= 0.5 ? TileClass::urban : TileClass::rural;
                        sum_inhabited += st.field;
                        ++n_inhabited;
                    }
                    sum_all += st.field;
                    d.tiles.push_back(st);
                }

            d.field_mean = n_inhabited > 0
                               ? sum_inhabited / static_cast<double>(n_inhabited)
                               : sum_all / static_cast<double>(d.tiles.size());
            const double noise = spec.noise_sd * noise_rng.next_gaussian();
            d.density = std::exp(spec.coeff_a * d.field_mean + spec.coeff_b + noise);
            log_density.push_back(std::log(d.density));

            // Tile-aligned rectangle; edge coordinates match the tile corners
            // bit for bit so selection recovers the rectangle exactly.
            const double west = tile_edge_lon(x0, spec.zoom);
            const double east = tile_edge_lon(x0 + spec.tiles_x, spec.zoom);
            const double north = tile_edge_lat(y0, spec.zoom);
            const double south = tile_edge_lat(y0 + spec.tiles_y, spec.zoom);
            Ring shell{{west, north}, {east, north}, {east, south}, {west, south}, {west, north}};
            world.districts.push_back(
                DistrictPolygon{d.district_id, {PolygonPart{shell, {}}}});
            world.truth.push_back(std::move(d));
        }

    world.planted_uninhabited_share =
        static_cast<double>(planted) / static_cast<double>(total_tiles);

    // Crowd-label a deterministic random subset of tiles.
    std::vector<std::pair<TileId, TileClass>> all;
    for (const auto& d : world.truth)
        for (const auto& st : d.tiles) all.emplace_back(st.tile, st.klass);
    Rng label_rng(mix_seed(spec.seed, 0x1ABE1u));
    label_rng.shuffle(all);
    const std::size_t n_labeled = static_cast<std::size_t>(
        std::llround(spec.label_fraction * static_cast<double>(all.size())));
    world.labeled.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_labeled));
    std::sort(world.labeled.begin(), world.labeled.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    double mean = 0.0;
    for (double v : log_density) mean += v;
    mean /= static_cast<double>(log_density.size());
    double var = 0.0;
    for (double v : log_density) var += (v - mean) * (v - mean);
    var /= static_cast<double>(log_density.size());
    world.var_log_density = var;
    world.achievable_r2 =
        var > 0.0 ? std::max(0.0, 1.0 - spec.noise_sd * spec.noise_sd / var) : 0.0;
    return world;
}

Image render_tile(const SynthWorldSpec& spec, const SynthTile& st) {
    const int n = spec.tile_px;
    Image img;
    img.h = n;
    img.w = n;
    img.pixels.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n) * 3, 0.0f);
    Rng rng(mix_seed(spec.seed, tile_key(st.tile)));
    const float f = static_cast<float>(st.field);

    if (st.klass == TileClass::uninhabited) {
        for (int y = 0; y < n; ++y) {
            const float wave =
                0.06f * static_cast<float>(std::sin(2.0 * kPi * (3.0 * y / n) + 1.3));
            for (int x = 0; x < n; ++x) {
                img.at(y, x, 0) = 0.08f;
                img.at(y, x, 1) = 0.12f + 0.5f * wave;
                img.at(y, x, 2) = 0.55f + wave;
            }
        }
    } else if (st.klass == TileClass::rural) {
        const float g = 0.45f + 0.35f * f;
        fill_rect(img, 0, 0, n, n, 0.18f, g, 0.12f);
        for (int k = 16; k < n; k += 16) {  // plot boundaries
            fill_rect(img, k, 0, 1, n, 0.10f, 0.30f, 0.08f);
            fill_rect(img, 0, k, n, 1, 0.10f, 0.30f, 0.08f);
        }
        const int trees = std::max(4, n * n / 64);  // ~6% canopy at any size
        for (int t = 0; t < trees; ++t) {
            const int y = static_cast<int>(rng.next_int(static_cast<std::uint64_t>(n - 1)));
            const int x = static_cast<int>(rng.next_int(static_cast<std::uint64_t>(n - 1)));
            fill_rect(img, y, x, 2, 2, 0.08f, 0.35f, 0.10f);
        }
    } else {  // urban
        const float base = 0.32f + 0.25f * f;
        fill_rect(img, 0, 0, n, n, base, base, base + 0.02f);
        for (int k = 0; k < n; k += 16) {  // road grid
            fill_rect(img, k, 0, 2, n, 0.15f, 0.15f, 0.15f);
            fill_rect(img, 0, k, n, 2, 0.15f, 0.15f, 0.15f);
        }
        const int buildings = 6 + static_cast<int>(std::lround(18.0f * f));
        for (int b = 0; b < buildings; ++b) {
            const int y = static_cast<int>(rng.next_int(static_cast<std::uint64_t>(n - 4)));
            const int x = static_cast<int>(rng.next_int(static_cast<std::uint64_t>(n - 4)));
            const int h = 4 + static_cast<int>(rng.next_int(7));
            const int w = 4 + static_cast<int>(rng.next_int(7));
            const float tone = 0.55f + 0.35f * static_cast<float>(rng.next_double());
            fill_rect(img, y, x, h, w, tone, tone, tone * 0.95f);
        }
    }

    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
        const float noise = 0.02f * (static_cast<float>(rng.next_double()) - 0.5f);
        for (int c = 0; c < 3; ++c)
            img.pixels[i + static_cast<std::size_t>(c)] = std::min(
                1.0f, std::max(0.0f, img.pixels[i + static_cast<std::size_t>(c)] + noise));
    }
    return img;
}

void write_synth_world(const SynthWorld& world, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "labels");
    fs::create_directories(out_dir / "tiles");

    write_text_file(out_dir / "districts.geojson", districts_geojson(world.districts));

    DemographicsTable demo;
    demo.variables = {"density"};
    for (const auto& d : world.truth) {
        demo.district_ids.push_back(d.district_id);
        demo.values.push_back({d.density});
    }
    write_text_file(out_dir / "demographics.csv", demographics_csv(demo));

    std::string truth = "district_id,z,x,y,class,field\n";
    for (const auto& d : world.truth)
        for (const auto& st : d.tiles) {
            truth += d.district_id + "," + std::to_string(st.tile.z) + "," +
                     std::to_string(st.tile.x) + "," + std::to_string(st.tile.y) + "," +
                     std::to_string(static_cast<int>(st.klass)) + "," + fmt_double(st.field) +
                     "\n";
        }
    write_text_file(out_dir / "truth.csv", truth);

    // Crowd votes: class names for the 3-way file, inhabited flags for the
    // binary file; optional per-vote flip noise.
    static const char* kClassNames[3] = {"urban", "rural", "uninhabited"};
    Rng vote_rng(mix_seed(world.spec.seed, 0x07E5u));
    std::string class_votes = "z,x,y,votes\n";
    std::string binary_votes = "z,x,y,votes\n";
    for (const auto& [tile, klass] : world.labeled) {
        std::string cv, bv;
        for (int v = 0; v < world.spec.votes_per_tile; ++v) {
            int c = static_cast<int>(klass);
            if (world.spec.vote_noise > 0.0 && vote_rng.next_double() < world.spec.vote_noise)
                c = (c + 1 + static_cast<int>(vote_rng.next_int(2))) % 3;
            if (v) {
                cv += '|';
                bv += '|';
            }
            cv += kClassNames[c];
            bv += (c == 2 ? "uninhabited" : "inhabited");
        }
        const std::string prefix = std::to_string(tile.z) + "," + std::to_string(tile.x) + "," +
                                   std::to_string(tile.y) + ",";
        class_votes += prefix + cv + "\n";
        binary_votes += prefix + bv + "\n";
    }
    write_text_file(out_dir / "labels" / "class_votes.csv", class_votes);
    write_text_file(out_dir / "labels" / "binary_votes.csv", binary_votes);

    for (std::size_t i = 0; i < world.truth.size(); ++i) {
        const auto& d = world.truth[i];
        for (const auto& st : d.tiles) {
            const fs::path p = tile_image_path(out_dir / "tiles", d.district_id, st.tile);
            fs::create_directories(p.parent_path());
            save_png(p, render_tile(world.spec, st));
        }
    }

    nlohmann::ordered_json j;
    j["zoom"] = world.spec.zoom;
    j["origin"] = {world.spec.origin_x, world.spec.origin_y};
    j["districts"] = {world.spec.districts_x, world.spec.districts_y};
    j["tiles_per_district"] = {world.spec.tiles_x, world.spec.tiles_y};
    j["tile_px"] = world.spec.tile_px;
    j["uninhabited_fraction"] = world.spec.uninhabited_fraction;
    j["label_fraction"] = world.spec.label_fraction;
    j["votes_per_tile"] = world.spec.votes_per_tile;
    j["vote_noise"] = world.spec.vote_noise;
    j["coeff_a"] = world.spec.coeff_a;
    j["coeff_b"] = world.spec.coeff_b;
    j["noise_sd"] = world.spec.noise_sd;
    j["seed"] = world.spec.seed;
    j["n_districts"] = world.truth.size();
    j["n_tiles"] = world.truth.size() * world.truth[0].tiles.size();
    j["n_labeled"] = world.labeled.size();
    j["planted_uninhabited_share"] = world.planted_uninhabited_share;
    j["var_log_density"] = world.var_log_density;
    j["achievable_r2"] = world.achievable_r2;
    write_text_file(out_dir / "world.json", j.dump(1) + "\n");
}

}  // namespace readcore
