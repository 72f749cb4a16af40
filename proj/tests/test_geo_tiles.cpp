#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "read/geo_tiles.hpp"
#include "read/util.hpp"

using namespace readcore;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent tile-corner math: exp2/sinh instead of pow/exp.
double o_edge_lon(int x, int z) { return 360.0 * x / std::exp2(z) - 180.0; }
double o_edge_lat(int y, int z) {
    return std::atan(std::sinh(kPi * (1.0 - 2.0 * y / std::exp2(z)))) * 180.0 / kPi;
}

double is_left(const GeoPoint& p0, const GeoPoint& p1, const GeoPoint& p2) {
    return (p1.lon - p0.lon) * (p2.lat - p0.lat) - (p2.lon - p0.lon) * (p1.lat - p0.lat);
}

// Winding-number point-in-ring; a different algorithm than the library's
// even-odd ray casting, agreeing for simple rings off the boundary.
bool wn_in_ring(const GeoPoint& p, const Ring& ring) {
    int wn = 0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const GeoPoint& a = ring[i];
        const GeoPoint& b = ring[i + 1];
        if (a.lat <= p.lat) {
            if (b.lat > p.lat && is_left(a, b, p) > 0) ++wn;
        } else {
            if (b.lat <= p.lat && is_left(a, b, p) < 0) --wn;
        }
    }
    return wn != 0;
}

bool wn_inside(const GeoPoint& p, const DistrictPolygon& poly) {
    for (const auto& part : poly.parts) {
        if (!wn_in_ring(p, part.shell)) continue;
        bool in_hole = false;
        for (const auto& hole : part.holes)
            if (wn_in_ring(p, hole)) {
                in_hole = true;
                break;
            }
        if (!in_hole) return true;
    }
    return false;
}

// Brute force: every tile of the zoom level, own corner math, own
// point-in-polygon. Returns (x,y) -> corner hits for hits >= 3.
std::map<std::pair<int, int>, int> brute_force_select(const DistrictPolygon& poly, int z) {
    std::map<std::pair<int, int>, int> out;
    const int n = 1 << z;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const GeoPoint corners[4] = {{o_edge_lon(x, z), o_edge_lat(y, z)},
                                         {o_edge_lon(x + 1, z), o_edge_lat(y, z)},
                                         {o_edge_lon(x + 1, z), o_edge_lat(y + 1, z)},
                                         {o_edge_lon(x, z), o_edge_lat(y + 1, z)}};
            int hits = 0;
            for (const auto& c : corners)
                if (wn_inside(c, poly)) ++hits;
            if (hits >= 3) out[{x, y}] = hits;
        }
    }
    return out;
}

// Star-shaped polygon around a center: sorted angles with random radii give
// a simple ring by construction.
DistrictPolygon star_polygon(Rng& rng, double clon, double clat, double rmax, int nv) {
    std::vector<double> angles(static_cast<std::size_t>(nv));
    for (auto& a : angles) a = rng.uniform(0.0, 2.0 * kPi);
    std::sort(angles.begin(), angles.end());
    Ring ring;
    for (double a : angles) {
        const double r = rng.uniform(0.3 * rmax, rmax);
        ring.push_back({clon + r * std::cos(a), clat + r * std::sin(a)});
    }
    ring.push_back(ring.front());
    DistrictPolygon poly;
    poly.district_id = "star";
    poly.parts.push_back({ring, {}});
    return poly;
}

Ring rect_ring(double w, double s, double e, double n) {
    return {{w, n}, {e, n}, {e, s}, {w, s}, {w, n}};
}

}  // namespace

TEST_CASE("lonlat_to_tile quadrants and boundaries") {
    CHECK(lonlat_to_tile({0.0, 0.0}, 0) == TileId{0, 0, 0});
    CHECK(lonlat_to_tile({179.0, -80.0}, 0) == TileId{0, 0, 0});

    CHECK(lonlat_to_tile({-90.0, 45.0}, 1) == TileId{0, 0, 1});
    CHECK(lonlat_to_tile({90.0, 45.0}, 1) == TileId{1, 0, 1});
    CHECK(lonlat_to_tile({-90.0, -45.0}, 1) == TileId{0, 1, 1});
    CHECK(lonlat_to_tile({90.0, -45.0}, 1) == TileId{1, 1, 1});

    // The east world edge belongs to the last column.
    CHECK(lonlat_to_tile({180.0, 0.0}, 3) == TileId{7, 4, 3});
    CHECK(lonlat_to_tile({-180.0, 0.0}, 3).x == 0);
}

TEST_CASE("lonlat_to_tile agrees with the asinh form on random points") {
    Rng rng(77);
    for (int i = 0; i < 3000; ++i) {
        const double lon = rng.uniform(-180.0, 180.0);
        const double lat = rng.uniform(-84.9, 84.9);
        const int z = rng.next_int(16);
        const double n = std::exp2(z);
        const int ox = static_cast<int>(std::floor((lon + 180.0) / 360.0 * n));
        const int oy = static_cast<int>(
            std::floor((1.0 - std::asinh(std::tan(lat * kPi / 180.0)) / kPi) / 2.0 * n));
        const TileId t = lonlat_to_tile({lon, lat}, z);
        CHECK(t.x == std::clamp(ox, 0, static_cast<int>(n) - 1));
        CHECK(t.y == std::clamp(oy, 0, static_cast<int>(n) - 1));
    }
}

TEST_CASE("lonlat_to_tile rejects bad input") {
    CHECK_THROWS_AS(lonlat_to_tile({0.0, 86.0}, 5), data_error);
    CHECK_THROWS_AS(lonlat_to_tile({0.0, -86.0}, 5), data_error);
    CHECK_THROWS_AS(lonlat_to_tile({0.0, 0.0}, -1), config_error);
    CHECK_THROWS_AS(lonlat_to_tile({0.0, 0.0}, 19), config_error);
    // The exact Mercator limit is legal.
    CHECK(lonlat_to_tile({0.0, kMercatorMaxLat}, 4).y == 0);
    CHECK(lonlat_to_tile({0.0, -kMercatorMaxLat}, 4).y == 15);
}

TEST_CASE("tile corners: world edges and sharing") {
    CHECK(tile_edge_lon(0, 5) == -180.0);
    CHECK(tile_edge_lon(32, 5) == 180.0);
    CHECK(tile_edge_lat(0, 5) == doctest::Approx(kMercatorMaxLat).epsilon(1e-9));
    CHECK(tile_edge_lat(32, 5) == doctest::Approx(-kMercatorMaxLat).epsilon(1e-9));
    CHECK(tile_edge_lat(16, 5) == doctest::Approx(0.0).epsilon(1e-12));

    // Neighbouring tiles share corners bit for bit.
    auto a = tile_corners({5, 7, 4});
    auto b = tile_corners({6, 8, 4});  // diagonal neighbour to the south-east
    CHECK(a[2].lon == b[0].lon);
    CHECK(a[2].lat == b[0].lat);

    // NW, NE, SE, SW ordering.
    CHECK(a[0].lon < a[1].lon);
    CHECK(a[0].lat > a[3].lat);
    CHECK(a[1].lon == a[2].lon);

    auto c = tile_center({5, 7, 4});
    CHECK(c.lon == doctest::Approx(0.5 * (a[0].lon + a[1].lon)));
    CHECK(c.lat > a[3].lat);
    CHECK(c.lat < a[0].lat);
}

TEST_CASE("point_in_polygon: containment, boundary, holes") {
    DistrictPolygon sq;
    sq.district_id = "sq";
    sq.parts.push_back({rect_ring(0, 0, 1, 1), {}});

    CHECK(point_in_polygon({0.5, 0.5}, sq));
    CHECK_FALSE(point_in_polygon({2.0, 0.5}, sq));
    CHECK_FALSE(point_in_polygon({0.5, -0.1}, sq));
    // Boundary points count as inside: edges and vertices.
    CHECK(point_in_polygon({0.0, 0.5}, sq));
    CHECK(point_in_polygon({0.5, 1.0}, sq));
    CHECK(point_in_polygon({0.0, 0.0}, sq));
    CHECK(point_in_polygon({1.0, 1.0}, sq));

    DistrictPolygon holed = sq;
    holed.parts[0].holes.push_back(rect_ring(0.25, 0.25, 0.75, 0.75));
    CHECK_FALSE(point_in_polygon({0.5, 0.5}, holed));   // inside the hole
    CHECK(point_in_polygon({0.25, 0.5}, holed));        // on the hole edge
    CHECK(point_in_polygon({0.1, 0.5}, holed));         // between hole and shell
    CHECK_FALSE(point_in_polygon({2.0, 2.0}, holed));

    DistrictPolygon multi = holed;
    multi.parts.push_back({rect_ring(3, 3, 4, 4), {}});
    CHECK(point_in_polygon({3.5, 3.5}, multi));
    CHECK_FALSE(point_in_polygon({2.0, 2.0}, multi));
}

TEST_CASE("point_in_polygon matches a winding-number oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        auto poly = star_polygon(rng, rng.uniform(-100, 100), rng.uniform(-50, 50),
                                 rng.uniform(5, 25), 5 + rng.next_int(10));
        for (int i = 0; i < 500; ++i) {
            GeoPoint p{rng.uniform(-150, 150), rng.uniform(-80, 80)};
            CHECK(point_in_polygon(p, poly) == wn_inside(p, poly));
        }
    }
}

TEST_CASE("select_tiles equals brute force over whole zoom levels") {
    Rng rng(101);
    for (int trial = 0; trial < 6; ++trial) {
        const int z = trial % 2 == 0 ? 3 : 6;
        auto poly = star_polygon(rng, rng.uniform(-120, 120), rng.uniform(-55, 55),
                                 rng.uniform(10, 40), 4 + rng.next_int(9));
        const auto expect = brute_force_select(poly, z);
        const TileSelection sel = select_tiles(poly, z);

        REQUIRE(sel.tiles.size() == sel.vertex_hits.size());
        CHECK(sel.tiles.size() == expect.size());
        for (std::size_t i = 0; i < sel.tiles.size(); ++i) {
            auto it = expect.find({sel.tiles[i].x, sel.tiles[i].y});
            REQUIRE(it != expect.end());
            CHECK(it->second == sel.vertex_hits[i]);
            CHECK(sel.tiles[i].z == z);
        }
        CHECK(std::is_sorted(sel.tiles.begin(), sel.tiles.end()));
    }
}

TEST_CASE("three corners suffice, two do not") {
    const TileId t{5, 6, 4};
    auto c = tile_corners(t);
    const double eps = 1e-6;
    const double w = c[1].lon - c[0].lon;
    const double h = c[0].lat - c[3].lat;

    // The tile box expanded by eps with the SW corner chopped off: NW, NE
    // and SE stay strictly inside, SW falls in the cut.
    DistrictPolygon pent;
    pent.district_id = "pent";
    pent.parts.push_back({Ring{{c[0].lon - eps, c[0].lat + eps},
                               {c[1].lon + eps, c[1].lat + eps},
                               {c[2].lon + eps, c[2].lat - eps},
                               {c[3].lon + 0.3 * w, c[3].lat - eps},
                               {c[3].lon - eps, c[3].lat + 0.3 * h},
                               {c[0].lon - eps, c[0].lat + eps}},
                          {}});
    const TileSelection sel = select_tiles(pent, 4);
    bool found = false;
    for (std::size_t i = 0; i < sel.tiles.size(); ++i) {
        if (sel.tiles[i] == t) {
            found = true;
            CHECK(sel.vertex_hits[i] == 3);
        }
    }
    CHECK(found);

    // A thin band across the tile's north edge touches only two corners of
    // any tile it meets, so nothing is selected.
    DistrictPolygon band;
    band.district_id = "band";
    band.parts.push_back(
        {rect_ring(c[0].lon - eps, c[0].lat - eps, c[1].lon + eps, c[0].lat + eps), {}});
    CHECK(select_tiles(band, 4).tiles.empty());
}

TEST_CASE("tile-aligned rectangle selects exactly its tiles") {
    // Rectangle spanning tiles x in [4,6], y in [5,7] at z=4, corners bit-equal
    // to tile edges. Boundary corners count as inside, so all nine tiles score 4.
    const int z = 4;
    DistrictPolygon rect;
    rect.district_id = "rect";
    rect.parts.push_back({rect_ring(tile_edge_lon(4, z), tile_edge_lat(8, z),
                                    tile_edge_lon(7, z), tile_edge_lat(5, z)),
                          {}});
    const TileSelection sel = select_tiles(rect, z);
    REQUIRE(sel.tiles.size() == 9);
    std::size_t i = 0;
    for (int y = 5; y <= 7; ++y)
        for (int x = 4; x <= 6; ++x, ++i) {
            CHECK(sel.tiles[i] == TileId{x, y, z});
            CHECK(sel.vertex_hits[i] == 4);
        }
}

TEST_CASE("selection is invariant to ring orientation and starting vertex") {
    Rng rng(55);
    auto poly = star_polygon(rng, 20, 10, 15, 9);
    const auto base = select_tiles(poly, 5);

    DistrictPolygon rev = poly;
    std::reverse(rev.parts[0].shell.begin(), rev.parts[0].shell.end());
    auto rsel = select_tiles(rev, 5);
    CHECK(rsel.tiles == base.tiles);
    CHECK(rsel.vertex_hits == base.vertex_hits);

    DistrictPolygon rot = poly;
    Ring& r = rot.parts[0].shell;
    r.pop_back();
    std::rotate(r.begin(), r.begin() + 3, r.end());
    r.push_back(r.front());
    auto rotsel = select_tiles(rot, 5);
    CHECK(rotsel.tiles == base.tiles);
    CHECK(rotsel.vertex_hits == base.vertex_hits);
}

TEST_CASE("selection shifts with a one-tile translation") {
    Rng rng(66);
    auto poly = star_polygon(rng, -30, 25, 12, 8);
    const double tile_w = 360.0 / 8.0;  // z=3
    DistrictPolygon moved = poly;
    for (auto& p : moved.parts[0].shell) p.lon += tile_w;

    auto a = select_tiles(poly, 3);
    auto b = select_tiles(moved, 3);
    REQUIRE(a.tiles.size() == b.tiles.size());
    for (std::size_t i = 0; i < a.tiles.size(); ++i) {
        CHECK(b.tiles[i].x == a.tiles[i].x + 1);
        CHECK(b.tiles[i].y == a.tiles[i].y);
    }
    CHECK(b.vertex_hits == a.vertex_hits);
}

TEST_CASE("latitudes beyond the Mercator limit are clamped, not fatal") {
    DistrictPolygon cap;
    cap.district_id = "cap";
    cap.parts.push_back({rect_ring(-170, 60, 170, 89), {}});
    const TileSelection sel = select_tiles(cap, 3);
    CHECK_FALSE(sel.tiles.empty());
    bool has_top_row = false;
    for (const auto& t : sel.tiles) {
        CHECK(t.y <= 1);  // rows whose south edge sits above 60°
        has_top_row = has_top_row || t.y == 0;
    }
    CHECK(has_top_row);
}

TEST_CASE("polygon smaller than a tile selects nothing") {
    auto c = tile_center({5, 6, 4});
    DistrictPolygon tiny;
    tiny.district_id = "tiny";
    tiny.parts.push_back(
        {rect_ring(c.lon - 1e-4, c.lat - 1e-4, c.lon + 1e-4, c.lat + 1e-4), {}});
    CHECK(select_tiles(tiny, 4).tiles.empty());
    CHECK(select_tiles(DistrictPolygon{"void", {}}, 4).tiles.empty());
}

TEST_CASE("validate_polygon catches malformed rings") {
    DistrictPolygon ok;
    ok.district_id = "ok";
    ok.parts.push_back({rect_ring(0, 0, 1, 1), {rect_ring(0.2, 0.2, 0.4, 0.4)}});
    CHECK_NOTHROW(validate_polygon(ok));

    DistrictPolygon open = ok;
    open.parts[0].shell.back() = {0.5, 0.5};
    CHECK_THROWS_WITH_AS(validate_polygon(open),
                         "district ok part 0 shell: ring is not closed (first vertex != last)",
                         data_error);

    DistrictPolygon few = ok;
    few.parts[0].shell = {{0, 0}, {1, 1}, {0, 0}};
    CHECK_THROWS_AS(validate_polygon(few), data_error);

    DistrictPolygon bow = ok;
    bow.parts[0].shell = {{0, 0}, {1, 1}, {1, 0}, {0, 1}, {0, 0}};
    try {
        validate_polygon(bow);
        FAIL("expected a self-intersection error");
    } catch (const data_error& e) {
        CHECK(std::string(e.what()).find("self-intersects") != std::string::npos);
    }

    DistrictPolygon empty;
    empty.district_id = "none";
    CHECK_THROWS_AS(validate_polygon(empty), data_error);
}

TEST_CASE("tile selection csv round trip") {
    TileSelection a{"alpha", 7, {{10, 4, 7}, {11, 4, 7}, {10, 5, 7}}, {4, 3, 4}};
    TileSelection b{"beta", 7, {{99, 98, 7}}, {3}};
    const std::string csv = tile_selection_csv({a, b});
    CHECK(csv.substr(0, csv.find('\n')) == "district_id,z,x,y,vertex_hits");

    auto parsed = parse_tile_selection_csv(csv);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].district_id == "alpha");
    CHECK(parsed[0].zoom == 7);
    CHECK(parsed[0].tiles == a.tiles);
    CHECK(parsed[0].vertex_hits == a.vertex_hits);
    CHECK(parsed[1].tiles == b.tiles);

    CHECK(tile_selection_csv({TileSelection{"empty", 5, {}, {}}}) ==
          "district_id,z,x,y,vertex_hits\n");

    CHECK_THROWS_AS(parse_tile_selection_csv("x,y\n"), data_error);
    CHECK_THROWS_AS(parse_tile_selection_csv("district_id,z,x,y,vertex_hits\nd,1,2\n"),
                    data_error);
    CHECK_THROWS_AS(
        parse_tile_selection_csv("district_id,z,x,y,vertex_hits\nd,1,2,3,4\nd,2,2,3,4\n"),
        data_error);
}
