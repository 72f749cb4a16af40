#include "read/geo_tiles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace readcore {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

TileId lonlat_to_tile(const GeoPoint& p, int z) {
    if (z < 0 || z > 18) throw config_error("zoom out of range: " + std::to_string(z));
    if (!(p.lat > -kMercatorMaxLat - 1e-12 && p.lat < kMercatorMaxLat + 1e-12))
        throw data_error("latitude outside Mercator range: " + fmt_double(p.lat));
    const double n = std::pow(2.0, z);
    const double lat_rad = p.lat * kPi / 180.0;
    double xt = (p.lon + 180.0) / 360.0 * n;
    double yt = (1.0 - std::log(std::tan(lat_rad) + 1.0 / std::cos(lat_rad)) / kPi) / 2.0 * n;
    int x = static_cast<int>(std::floor(xt));
    int y = static_cast<int>(std::floor(yt));
    // Points on the east/south world boundary fall into the last tile.
    const int maxi = static_cast<int>(n) - 1;
    x = std::clamp(x, 0, maxi);
    y = std::clamp(y, 0, maxi);
    return TileId{x, y, z};
}

double tile_edge_lon(int x, int z) {
    return static_cast<double>(x) / std::pow(2.0, z) * 360.0 - 180.0;
}

double tile_edge_lat(int y, int z) {
    const double n = kPi - 2.0 * kPi * static_cast<double>(y) / std::pow(2.0, z);
    return 180.0 / kPi * std::atan(0.5 * (std::exp(n) - std::exp(-n)));
}

std::array<GeoPoint, 4> tile_corners(const TileId& t) {
    const double w = tile_edge_lon(t.x, t.z);
    const double e = tile_edge_lon(t.x + 1, t.z);
    const double nlat = tile_edge_lat(t.y, t.z);
    const double slat = tile_edge_lat(t.y + 1, t.z);
    return {GeoPoint{w, nlat}, GeoPoint{e, nlat}, GeoPoint{e, slat}, GeoPoint{w, slat}};
}

GeoPoint tile_center(const TileId& t) {
    auto c = tile_corners(t);
    return GeoPoint{0.5 * (c[0].lon + c[1].lon), 0.5 * (c[0].lat + c[3].lat)};
}

namespace {

// 0 = outside, 1 = inside, 2 = exactly on the boundary.
int ring_side(const GeoPoint& p, const Ring& ring) {
    bool inside = false;
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = ring[i].lon, yi = ring[i].lat;
        const double xj = ring[j].lon, yj = ring[j].lat;

        // On-segment check: colinear and within the bounding box.
        const double cross = (xj - xi) * (p.lat - yi) - (yj - yi) * (p.lon - xi);
        if (cross == 0.0 && p.lon >= std::min(xi, xj) && p.lon <= std::max(xi, xj) &&
            p.lat >= std::min(yi, yj) && p.lat <= std::max(yi, yj))
            return 2;

        const bool crosses = (yi > p.lat) != (yj > p.lat);
        if (crosses) {
            const double x_at = (xj - xi) * (p.lat - yi) / (yj - yi) + xi;
            if (p.lon < x_at) inside = !inside;
        }
    }
    return inside ? 1 : 0;
}

}  // namespace

bool point_in_polygon(const GeoPoint& p, const DistrictPolygon& poly) {
    for (const auto& part : poly.parts) {
        const int s = ring_side(p, part.shell);
        if (s == 0) continue;
        if (s == 2) return true;  // on the shell edge counts as inside
        bool in_hole = false;
        for (const auto& hole : part.holes) {
            const int hs = ring_side(p, hole);
            if (hs == 2) return true;  // on a hole edge still counts as inside
            if (hs == 1) {
                in_hole = true;
                break;
            }
        }
        if (!in_hole) return true;
    }
    return false;
}

TileSelection select_tiles(const DistrictPolygon& poly, int z) {
    TileSelection sel;
    sel.district_id = poly.district_id;
    sel.zoom = z;

    double min_lon = std::numeric_limits<double>::infinity();
    double max_lon = -std::numeric_limits<double>::infinity();
    double min_lat = std::numeric_limits<double>::infinity();
    double max_lat = -std::numeric_limits<double>::infinity();
    for (const auto& part : poly.parts) {
        for (const auto& p : part.shell) {
            min_lon = std::min(min_lon, p.lon);
            max_lon = std::max(max_lon, p.lon);
            min_lat = std::min(min_lat, p.lat);
            max_lat = std::max(max_lat, p.lat);
        }
    }
    if (!std::isfinite(min_lon)) return sel;  // no geometry at all

    min_lat = clampd(min_lat, -kMercatorMaxLat, kMercatorMaxLat);
    max_lat = clampd(max_lat, -kMercatorMaxLat, kMercatorMaxLat);

    const int maxi = (1 << z) - 1;
    const TileId tl = lonlat_to_tile(GeoPoint{min_lon, max_lat}, z);
    const TileId br = lonlat_to_tile(GeoPoint{max_lon, min_lat}, z);
    const int x0 = std::max(0, tl.x - 1), x1 = std::min(maxi, br.x + 1);
    const int y0 = std::max(0, tl.y - 1), y1 = std::min(maxi, br.y + 1);

    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const TileId t{x, y, z};
            int hits = 0;
            for (const auto& c : tile_corners(t))
                if (point_in_polygon(c, poly)) ++hits;
            if (hits >= 3) {
                sel.tiles.push_back(t);
                sel.vertex_hits.push_back(hits);
            }
        }
    }
    return sel;
}

namespace {

bool segments_properly_intersect(const GeoPoint& a, const GeoPoint& b, const GeoPoint& c,
                                 const GeoPoint& d) {
    auto orient = [](const GeoPoint& p, const GeoPoint& q, const GeoPoint& r) {
        const double v = (q.lon - p.lon) * (r.lat - p.lat) - (q.lat - p.lat) * (r.lon - p.lon);
        return (v > 0.0) - (v < 0.0);
    };
    const int o1 = orient(a, b, c), o2 = orient(a, b, d);
    const int o3 = orient(c, d, a), o4 = orient(c, d, b);
    return o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0;
}

void validate_ring(const Ring& ring, const std::string& what, bool check_self_intersection) {
    if (ring.size() < 4)
        throw data_error(what + ": ring needs at least 4 vertices (closed), got " +
                         std::to_string(ring.size()));
    if (ring.front().lon != ring.back().lon || ring.front().lat != ring.back().lat)
        throw data_error(what + ": ring is not closed (first vertex != last)");
    if (!check_self_intersection) return;
    // O(n^2) proper-crossing scan over non-adjacent edges; districts are small.
    const std::size_t n = ring.size() - 1;  // edges, ignoring the closing duplicate
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;  // first and last edge are adjacent
            if (segments_properly_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]))
                throw data_error(what + ": shell self-intersects (edges " + std::to_string(i) +
                                 " and " + std::to_string(j) + ")");
        }
    }
}

}  // namespace

void validate_polygon(const DistrictPolygon& poly) {
    if (poly.parts.empty()) throw data_error("district " + poly.district_id + ": no polygon parts");
    for (std::size_t pi = 0; pi < poly.parts.size(); ++pi) {
        const auto& part = poly.parts[pi];
        const std::string where = "district " + poly.district_id + " part " + std::to_string(pi);
        validate_ring(part.shell, where + " shell", true);
        for (std::size_t hi = 0; hi < part.holes.size(); ++hi)
            validate_ring(part.holes[hi], where + " hole " + std::to_string(hi), false);
    }
}

std::string tile_selection_csv(const std::vector<TileSelection>& selections) {
    std::string out = "district_id,z,x,y,vertex_hits\n";
    for (const auto& sel : selections) {
        for (std::size_t i = 0; i < sel.tiles.size(); ++i) {
            const TileId& t = sel.tiles[i];
            out += sel.district_id;
            out += ',';
            out += std::to_string(t.z);
            out += ',';
            out += std::to_string(t.x);
            out += ',';
            out += std::to_string(t.y);
            out += ',';
            out += std::to_string(sel.vertex_hits[i]);
            out += '\n';
        }
    }
    return out;
}

std::vector<TileSelection> parse_tile_selection_csv(const std::string& text) {
    std::vector<std::string> lines;
    {
        std::istringstream ss(text);
        std::string line;
        while (std::getline(ss, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) lines.push_back(line);
        }
    }
    if (lines.empty() || lines[0] != "district_id,z,x,y,vertex_hits")
        throw data_error("tile selection csv: bad or missing header");

    std::vector<TileSelection> out;
    std::map<std::string, std::size_t> index;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        auto cells = split(lines[li], ',');
        if (cells.size() != 5)
            throw data_error("tile selection csv: row " + std::to_string(li) + " has " +
                             std::to_string(cells.size()) + " fields, expected 5");
        const std::string ctx = "tile selection csv row " + std::to_string(li);
        TileId t;
        t.z = static_cast<int>(parse_long(cells[1], ctx));
        t.x = static_cast<int>(parse_long(cells[2], ctx));
        t.y = static_cast<int>(parse_long(cells[3], ctx));
        const int hits = static_cast<int>(parse_long(cells[4], ctx));

        auto it = index.find(cells[0]);
        if (it == index.end()) {
            index.emplace(cells[0], out.size());
            out.push_back(TileSelection{cells[0], t.z, {}, {}});
            it = index.find(cells[0]);
        }
        TileSelection& sel = out[it->second];
        if (sel.zoom != t.z)
            throw data_error("tile selection csv: district " + cells[0] + " mixes zoom levels");
        sel.tiles.push_back(t);
        sel.vertex_hits.push_back(hits);
    }
    return out;
}

}  // namespace readcore
