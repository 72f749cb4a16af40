#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "read/util.hpp"

namespace readcore {

inline constexpr double kMercatorMaxLat = 85.0511287798;

struct TileId {
    int x = 0;
    int y = 0;
    int z = 0;

    bool operator==(const TileId&) const = default;
    // Row-major order (y, then x) so exports read top-to-bottom, left-to-right.
    bool operator<(const TileId& o) const {
        if (z != o.z) return z < o.z;
        if (y != o.y) return y < o.y;
        return x < o.x;
    }
};

struct GeoPoint {
    double lon = 0.0;
    double lat = 0.0;

    bool operator==(const GeoPoint&) const = default;
};

using Ring = std::vector<GeoPoint>;

// One shell plus its holes. A district may consist of several parts.
struct PolygonPart {
    Ring shell;
    std::vector<Ring> holes;
};

struct DistrictPolygon {
    std::string district_id;
    std::vector<PolygonPart> parts;
};

struct TileSelection {
    std::string district_id;
    int zoom = 0;
    std::vector<TileId> tiles;        // sorted by (y, x)
    std::vector<int> vertex_hits;     // parallel to tiles; each in {3, 4}
};

TileId lonlat_to_tile(const GeoPoint& p, int z);

// Boundary coordinates of tile column x / row y; column x spans
// [edge(x), edge(x+1)) and row y spans (edge(y+1), edge(y)].
double tile_edge_lon(int x, int z);
double tile_edge_lat(int y, int z);

// Corners ordered NW, NE, SE, SW.
std::array<GeoPoint, 4> tile_corners(const TileId& t);
GeoPoint tile_center(const TileId& t);

// Even-odd ray casting over all parts; points exactly on an edge count as
// inside. A point is in the district if it is inside some part's shell and
// outside that part's holes (on a hole edge still counts as inside).
bool point_in_polygon(const GeoPoint& p, const DistrictPolygon& poly);

// All tiles in the polygon's padded tile-space bounding box with at least
// three of four corners inside. Empty selections are allowed.
TileSelection select_tiles(const DistrictPolygon& poly, int z);

// Checks ring closure / minimum size and shell self-intersection.
// Throws data_error describing the offending ring.
void validate_polygon(const DistrictPolygon& poly);

std::string tile_selection_csv(const std::vector<TileSelection>& selections);
std::vector<TileSelection> parse_tile_selection_csv(const std::string& text);

}  // namespace readcore
