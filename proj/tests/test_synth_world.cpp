#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "read/synth_world.hpp"
#include "read/util.hpp"

using namespace readcore;
namespace fs = std::filesystem;

namespace {

SynthWorldSpec small_spec() {
    SynthWorldSpec s;
    s.zoom = 10;
    s.origin_x = 300;
    s.origin_y = 400;
    s.districts_x = 3;
    s.districts_y = 2;
    s.tiles_x = 4;
    s.tiles_y = 3;
    s.tile_px = 16;
    s.uninhabited_fraction = 0.5;
    s.label_fraction = 0.25;
    s.votes_per_tile = 3;
    s.vote_noise = 0.0;
    s.noise_sd = 0.0;
    s.seed = 9;
    return s;
}

double channel_mean(const Image& img, int c) {
    double s = 0.0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) s += img.at(y, x, c);
    return s / (static_cast<double>(img.h) * static_cast<double>(img.w));
}

}  // namespace

TEST_CASE("world spec validation") {
    CHECK_NOTHROW(small_spec().validate());
    auto bad = small_spec();
    bad.zoom = -1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.zoom = 23;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.districts_x = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.tiles_y = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.tile_px = 7;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.uninhabited_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.label_fraction = -0.1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.vote_noise = 2.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.votes_per_tile = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = small_spec();
    bad.noise_sd = -0.01;
    CHECK_THROWS_AS(bad.validate(), config_error);

    // 3 districts × 1 tile starting at x=6 overruns the 8-tile z=3 row
    bad = small_spec();
    bad.zoom = 3;
    bad.origin_x = 6;
    bad.origin_y = 0;
    bad.districts_x = 3;
    bad.districts_y = 1;
    bad.tiles_x = 1;
    bad.tiles_y = 1;
    CHECK_THROWS_WITH_AS(bad.validate(), "synth world: grid does not fit inside the zoom level",
                         config_error);
}

TEST_CASE("world layout: row-major districts of aligned tile rectangles") {
    const auto spec = small_spec();
    auto world = make_synth_world(spec);
    REQUIRE(world.truth.size() == 6);
    REQUIRE(world.districts.size() == 6);
    CHECK(world.truth[0].district_id == "D000");
    CHECK(world.truth[5].district_id == "D005");
    CHECK(world.districts[3].district_id == "D003");

    // district index 4 sits at grid (dx=1, dy=1)
    const auto& d = world.truth[4];
    REQUIRE(d.tiles.size() == 12);
    const int x0 = spec.origin_x + 1 * spec.tiles_x, y0 = spec.origin_y + 1 * spec.tiles_y;
    for (int ry = 0; ry < spec.tiles_y; ++ry)
        for (int rx = 0; rx < spec.tiles_x; ++rx) {
            const auto& t = d.tiles[static_cast<std::size_t>(ry * spec.tiles_x + rx)].tile;
            CHECK(t == TileId{x0 + rx, y0 + ry, spec.zoom});
        }

    // polygon corners reuse the exact tile edge coordinates
    const auto& shell = world.districts[4].parts[0].shell;
    REQUIRE(shell.size() == 5);
    CHECK(shell[0] == GeoPoint{tile_edge_lon(x0, spec.zoom), tile_edge_lat(y0, spec.zoom)});
    CHECK(shell[2] == GeoPoint{tile_edge_lon(x0 + spec.tiles_x, spec.zoom),
                               tile_edge_lat(y0 + spec.tiles_y, spec.zoom)});
    CHECK(shell.front() == shell.back());

    for (const auto& dd : world.truth)
        for (const auto& st : dd.tiles) {
            CHECK(st.field > 0.0);
            CHECK(st.field < 1.0);
            if (st.klass != TileClass::uninhabited)
                CHECK(st.klass == (st.field >= 0.5 ? TileClass::urban : TileClass::rural));
        }
}

TEST_CASE("tile selection recovers each district rectangle exactly") {
    const auto spec = small_spec();
    auto world = make_synth_world(spec);
    for (std::size_t i = 0; i < world.districts.size(); ++i) {
        auto sel = select_tiles(world.districts[i], spec.zoom);
        std::vector<TileId> want;
        for (const auto& st : world.truth[i].tiles) want.push_back(st.tile);
        CHECK(sel.tiles == want);  // both row-major by (y, x)
        for (int h : sel.vertex_hits) CHECK(h == 4);
    }
}

TEST_CASE("planted share is exact up to rounding") {
    auto spec = small_spec();
    auto world = make_synth_world(spec);
    CHECK(world.planted_uninhabited_share == 0.5);  // llround(0.5·72) = 36 of 72
    std::size_t uninhabited = 0;
    for (const auto& d : world.truth)
        for (const auto& st : d.tiles)
            if (st.klass == TileClass::uninhabited) ++uninhabited;
    CHECK(uninhabited == 36);

    spec.uninhabited_fraction = 0.37;
    CHECK(make_synth_world(spec).planted_uninhabited_share == 27.0 / 72.0);

    spec.uninhabited_fraction = 0.0;
    auto dry = make_synth_world(spec);
    CHECK(dry.planted_uninhabited_share == 0.0);
    for (const auto& d : dry.truth)
        for (const auto& st : d.tiles) CHECK(st.klass != TileClass::uninhabited);

    spec.uninhabited_fraction = 1.0;
    auto wet = make_synth_world(spec);
    CHECK(wet.planted_uninhabited_share == 1.0);
    for (const auto& d : wet.truth) {
        double sum = 0.0;
        for (const auto& st : d.tiles) {
            CHECK(st.klass == TileClass::uninhabited);
            sum += st.field;
        }
        // no inhabited tiles: the mean falls back to all tiles
        CHECK(d.field_mean == sum / static_cast<double>(d.tiles.size()));
    }
}

TEST_CASE("density is the exact planted function when noise is off") {
    const auto spec = small_spec();
    auto world = make_synth_world(spec);
    for (const auto& d : world.truth) {
        CHECK(d.density == std::exp(spec.coeff_a * d.field_mean + spec.coeff_b));
        double sum = 0.0;
        std::size_t cnt = 0;
        for (const auto& st : d.tiles)
            if (st.klass != TileClass::uninhabited) {
                sum += st.field;
                ++cnt;
            }
        if (cnt > 0) CHECK(d.field_mean == sum / static_cast<double>(cnt));
    }
    CHECK(world.achievable_r2 == 1.0);  // zero noise, positive variance

    auto noisy_spec = spec;
    noisy_spec.noise_sd = 0.2;
    auto noisy = make_synth_world(noisy_spec);
    CHECK(noisy.var_log_density > 0.0);
    CHECK(noisy.achievable_r2 ==
          std::max(0.0, 1.0 - 0.2 * 0.2 / noisy.var_log_density));
}

TEST_CASE("labeled subset: size, order, determinism") {
    const auto spec = small_spec();
    auto world = make_synth_world(spec);
    CHECK(world.labeled.size() == 18);  // llround(0.25·72)
    for (std::size_t i = 1; i < world.labeled.size(); ++i)
        CHECK(world.labeled[i - 1].first < world.labeled[i].first);

    std::map<TileId, TileClass> truth;
    for (const auto& d : world.truth)
        for (const auto& st : d.tiles) truth[st.tile] = st.klass;
    for (const auto& [tile, klass] : world.labeled) {
        REQUIRE(truth.count(tile) == 1);
        CHECK(truth[tile] == klass);
    }

    auto again = make_synth_world(spec);
    CHECK(again.labeled == world.labeled);
    for (std::size_t i = 0; i < world.truth.size(); ++i) {
        CHECK(again.truth[i].density == world.truth[i].density);
        for (std::size_t t = 0; t < world.truth[i].tiles.size(); ++t) {
            CHECK(again.truth[i].tiles[t].field == world.truth[i].tiles[t].field);
            CHECK(again.truth[i].tiles[t].klass == world.truth[i].tiles[t].klass);
        }
    }

    auto other_spec = spec;
    other_spec.seed = 10;
    auto other = make_synth_world(other_spec);
    CHECK(other.truth[0].tiles[0].field != world.truth[0].tiles[0].field);
}

TEST_CASE("rendered classes are separable by channel statistics") {
    const auto spec = small_spec();
    SynthTile water{TileId{300, 400, 10}, TileClass::uninhabited, 0.4};
    SynthTile farm{TileId{301, 400, 10}, TileClass::rural, 0.3};
    SynthTile city{TileId{302, 400, 10}, TileClass::urban, 0.9};

    auto wi = render_tile(spec, water);
    auto fi = render_tile(spec, farm);
    auto ci = render_tile(spec, city);
    CHECK(wi.h == spec.tile_px);
    CHECK(wi.w == spec.tile_px);

    CHECK(channel_mean(wi, 2) > channel_mean(wi, 0) + 0.2);  // water: blue ≫ red
    CHECK(channel_mean(fi, 1) > channel_mean(fi, 0) + 0.1);  // fields: green dominates
    CHECK(channel_mean(fi, 1) > channel_mean(fi, 2) + 0.1);
    CHECK(std::abs(channel_mean(ci, 0) - channel_mean(ci, 1)) < 0.05);  // city: gray
    CHECK(channel_mean(ci, 0) > 0.3);

    // intensity grows with the planted field
    SynthTile dim = farm;
    dim.field = 0.05;
    SynthTile lush = farm;
    lush.field = 0.95;
    CHECK(channel_mean(render_tile(spec, lush), 1) > channel_mean(render_tile(spec, dim), 1) + 0.1);

    auto wi2 = render_tile(spec, water);
    CHECK(wi2.pixels == wi.pixels);

    for (double v : {0.0, 1.0}) {
        SynthTile t = city;
        t.field = v;
        auto img = render_tile(spec, t);
        for (float p : img.pixels) {
            CHECK(p >= 0.0f);
            CHECK(p <= 1.0f);
        }
    }
}

TEST_CASE("written world is complete, loadable, and reproducible") {
    const auto spec = small_spec();
    auto world = make_synth_world(spec);
    const fs::path a = fs::temp_directory_path() / "readtest_world_a";
    const fs::path b = fs::temp_directory_path() / "readtest_world_b";
    fs::remove_all(a);
    fs::remove_all(b);
    write_synth_world(world, a);
    write_synth_world(world, b);

    for (const char* rel :
         {"districts.geojson", "demographics.csv", "truth.csv", "world.json",
          "labels/class_votes.csv", "labels/binary_votes.csv"}) {
        CAPTURE(rel);
        REQUIRE(fs::exists(a / rel));
        CHECK(read_text_file(a / rel) == read_text_file(b / rel));
    }
    const fs::path png =
        tile_image_path(a / "tiles", "D000", world.truth[0].tiles[0].tile);
    REQUIRE(fs::exists(png));
    CHECK(read_text_file(png) ==
          read_text_file(tile_image_path(b / "tiles", "D000", world.truth[0].tiles[0].tile)));

    auto districts = load_districts(a / "districts.geojson");
    CHECK(districts_geojson(districts) == districts_geojson(world.districts));

    auto demo = load_demographics(a / "demographics.csv");
    REQUIRE(demo.district_ids.size() == 6);
    CHECK(demo.variables == std::vector<std::string>{"density"});
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(demo.district_ids[i] == world.truth[i].district_id);
        CHECK(demo.values[i][0] == world.truth[i].density);
    }

    auto truth_lines = read_lines(a / "truth.csv");
    REQUIRE(truth_lines.size() == 73);
    CHECK(truth_lines[0] == "district_id,z,x,y,class,field");

    auto json = nlohmann::json::parse(read_text_file(a / "world.json"));
    CHECK(json["zoom"] == 10);
    CHECK(json["n_districts"] == 6);
    CHECK(json["n_tiles"] == 72);
    CHECK(json["n_labeled"] == 18);
    CHECK(json["planted_uninhabited_share"] == 0.5);
    CHECK(json["achievable_r2"] == 1.0);
    CHECK(json["seed"] == 9);

    // noiseless votes agree with the planted classes, and every PNG exists
    auto labels = load_labels(a / "labels/class_votes.csv", a / "labels/binary_votes.csv");
    REQUIRE(labels.size() == 18);
    std::map<TileId, TileClass> truth;
    for (const auto& d : world.truth)
        for (const auto& st : d.tiles) truth[st.tile] = st.klass;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CHECK(labels[i].tile == world.labeled[i].first);
        const int c = static_cast<int>(truth[labels[i].tile]);
        for (int j = 0; j < 3; ++j)
            CHECK(labels[i].probs[static_cast<std::size_t>(j)] == (j == c ? 1.0 : 0.0));
        CHECK(labels[i].inhabited_majority == (c != 2));
    }
    for (const auto& d : world.truth)
        for (const auto& st : d.tiles)
            CHECK(fs::exists(tile_image_path(a / "tiles", d.district_id, st.tile)));

    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("vote noise flips votes but keeps files well formed") {
    auto spec = small_spec();
    spec.vote_noise = 0.4;
    spec.votes_per_tile = 7;
    auto world = make_synth_world(spec);
    const fs::path dir = fs::temp_directory_path() / "readtest_world_noise";
    fs::remove_all(dir);
    write_synth_world(world, dir);

    auto labels = load_labels(dir / "labels/class_votes.csv", dir / "labels/binary_votes.csv");
    REQUIRE(labels.size() == 18);
    bool any_mixed = false;
    for (const auto& l : labels) {
        double sum = 0.0;
        for (double p : l.probs) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        if (*std::max_element(l.probs.begin(), l.probs.end()) < 1.0) any_mixed = true;
    }
    CHECK(any_mixed);  // 40% flip noise over 7 votes must dirty at least one tile
    fs::remove_all(dir);
}
