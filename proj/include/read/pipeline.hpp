#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "read/geo_tiles.hpp"

namespace readcore {

// Flat key=value configuration with dotted section prefixes. '#' starts a
// comment line. Relative paths resolve against the config file's directory.
struct Config {
    std::map<std::string, std::string> values;
    std::filesystem::path base_dir;

    static Config load(const std::filesystem::path& path);
    static Config from_string(const std::string& text, const std::filesystem::path& base_dir);

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;  // config_error when missing
    std::string get(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;
    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const;
    std::filesystem::path get_path(const std::string& key) const;
    std::filesystem::path get_path(const std::string& key,
                                   const std::filesystem::path& fallback) const;

    std::string canonical() const;  // sorted key=value lines
    std::string hash() const;       // hex digest of canonical()
    std::uint64_t seed() const;     // mandatory `seed` key
};

// Per-tile P(urban) raster over a selection's tile bounding box.
struct Heatmap {
    int zoom = 0;
    int x0 = 0, y0 = 0;  // NW tile of the bounding box
    int w = 0, h = 0;
    std::vector<char> selected;  // h×w row-major; 0 = no data
    std::vector<double> p;       // h×w; meaningful where selected

    std::size_t idx(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(w) +
               static_cast<std::size_t>(col);
    }
};

Heatmap make_heatmap(const TileSelection& selection,
                     const std::function<double(const TileId&)>& p_urban);
// Plain-text PGM (P2): 0 marks no-data, selected cells map p ∈ [0,1] to 1..255.
std::string heatmap_pgm(const Heatmap& hm);
// Columns z,x,y,selected,p_urban; p_urban empty on unselected cells.
std::string heatmap_csv(const Heatmap& hm);

extern const std::vector<std::string> kPipelineCommands;

// Runs one pipeline command against the config's workdir. Commands are
// serialized per workdir by a lock file; outputs land in fixed locations
// under workdir/{tiles,embeddings,models,pca,repr,reports} and are recorded
// in workdir/manifest.json together with their config-hash lineage.
void run_command(const std::string& command, const Config& config,
                 const std::string& variable_override = "");

}  // namespace readcore
