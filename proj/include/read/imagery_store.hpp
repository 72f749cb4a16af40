#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "read/geo_tiles.hpp"
#include "read/util.hpp"

namespace readcore {

// Channel-last float raster. Raw tile images keep intensities in [0,1];
// normalize_image produces the standardized view the networks consume.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> pixels;  // h*w*3, row-major, RGB

    Image() = default;
    Image(int hh, int ww) : h(hh), w(ww), pixels(static_cast<std::size_t>(hh) * ww * 3, 0.0f) {}

    float& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)];
    }
    float at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)];
    }
};

struct TileImage {
    TileId tile;
    Image image;  // intensities in [0,1]
};

// Class order everywhere: 0 = urban, 1 = rural, 2 = uninhabited.
struct SoftLabel {
    TileId tile;
    std::array<double, 3> probs{0.0, 0.0, 0.0};
    bool inhabited_majority = false;
};

struct EmbeddingRecord {
    TileId tile;
    std::string district_id;
    std::vector<float> vec;
};

struct NormStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

struct DemographicsTable {
    std::vector<std::string> variables;
    std::vector<std::string> district_ids;
    std::vector<std::vector<double>> values;  // values[row][var]

    std::size_t find_variable(const std::string& name) const;
};

std::vector<DistrictPolygon> load_districts(const std::filesystem::path& path);
std::string districts_geojson(const std::vector<DistrictPolygon>& districts);

// Class votes file: header `z,x,y,votes`, votes pipe-separated tokens
// (urban|rural|uninhabited). probs = mean of one-hot votes. The optional
// second file carries binary votes (inhabited|uninhabited) for the same
// tiles; when absent, the inhabited majority is derived from the class
// votes. Ties count as inhabited either way.
std::vector<SoftLabel> load_labels(const std::filesystem::path& class_votes_path,
                                   const std::optional<std::filesystem::path>& binary_votes_path);

void save_embeddings_csv(const std::filesystem::path& path,
                         const std::vector<EmbeddingRecord>& records);
void save_embeddings_binary(const std::filesystem::path& path,
                            const std::vector<EmbeddingRecord>& records);
// Detects the binary store by its magic bytes, otherwise parses CSV.
std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path);

// Rejects records whose district_id is not in `districts`.
void validate_embedding_districts(const std::vector<EmbeddingRecord>& records,
                                  const std::vector<DistrictPolygon>& districts);

Image load_png(const std::filesystem::path& path);            // 8-bit RGB only, scaled to [0,1]
void save_png(const std::filesystem::path& path, const Image& img);

// Per-channel population mean / std over every pixel of the corpus.
NormStats compute_norm_stats(const std::vector<const Image*>& corpus);
Image normalize_image(const Image& raw01, const NormStats& stats);

std::string norm_stats_csv(const NormStats& stats);
NormStats parse_norm_stats_csv(const std::string& text);

DemographicsTable load_demographics(const std::filesystem::path& path);
std::string demographics_csv(const DemographicsTable& table);

std::filesystem::path tile_image_path(const std::filesystem::path& tiles_dir,
                                      const std::string& district_id, const TileId& t);

}  // namespace readcore
