#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "read/geo_tiles.hpp"
#include "read/imagery_store.hpp"

namespace readcore {

// Procedural test world: a rectangular block of districts, each an aligned
// rectangle of slippy tiles. A smooth planted field drives urbanization and
// the demographic target; an independent field plants uninhabited tiles.
struct SynthWorldSpec {
    int zoom = 10;
    int origin_x = 300, origin_y = 400;  // NW tile of the world
    int districts_x = 8, districts_y = 8;
    int tiles_x = 8, tiles_y = 8;  // tiles per district, per axis
    int tile_px = 64;

    double uninhabited_fraction = 0.5;  // planted share of tiles, hit exactly up to rounding
    double label_fraction = 0.10;       // share of tiles that receive crowd votes
    int votes_per_tile = 5;
    double vote_noise = 0.0;  // per-vote chance of flipping to a random other class

    // density = exp(a · field_mean + b + gauss(noise_sd))
    double coeff_a = 3.0;
    double coeff_b = 2.0;
    double noise_sd = 0.10;

    std::uint64_t seed = 1;

    void validate() const;
    int world_tiles_x() const { return districts_x * tiles_x; }
    int world_tiles_y() const { return districts_y * tiles_y; }
};

enum class TileClass : int { urban = 0, rural = 1, uninhabited = 2 };

struct SynthTile {
    TileId tile;
    TileClass klass = TileClass::rural;
    double field = 0.0;  // planted urbanization level in [0,1]
};

struct SynthDistrict {
    std::string district_id;
    std::vector<SynthTile> tiles;  // row-major over the district rectangle
    double field_mean = 0.0;       // over inhabited tiles (all tiles if none inhabited)
    double density = 0.0;
};

struct SynthWorld {
    SynthWorldSpec spec;
    std::vector<DistrictPolygon> districts;
    std::vector<SynthDistrict> truth;  // parallel to districts
    std::vector<std::pair<TileId, TileClass>> labeled;  // sorted by tile id
    double planted_uninhabited_share = 0.0;
    double var_log_density = 0.0;
    double achievable_r2 = 0.0;  // 1 − noise_sd² / var(log density)
};

SynthWorld make_synth_world(const SynthWorldSpec& spec);

// Deterministic procedural tile image in [0,1] RGB. Classes are separable by
// channel statistics (gray blocks / green fields / blue water) and intensity
// varies continuously with the planted field.
Image render_tile(const SynthWorldSpec& spec, const SynthTile& tile);

// Writes districts.geojson, demographics.csv, truth.csv, world.json,
// labels/{class_votes,binary_votes}.csv, and tiles/<district>/z_x_y.png.
void write_synth_world(const SynthWorld& world, const std::filesystem::path& out_dir);

}  // namespace readcore
