#include "read/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>

#include "json.hpp"
#include "read/convnet.hpp"
#include "read/imagery_store.hpp"
#include "read/mean_teacher.hpp"
#include "read/pca.hpp"
#include "read/pruning.hpp"
#include "read/regression.hpp"
#include "read/spatial_stats.hpp"
#include "read/synth_world.hpp"
#include "read/util.hpp"

namespace readcore {

namespace fs = std::filesystem;
using njson = nlohmann::json;

// --- config ---------------------------------------------------------------

Config Config::from_string(const std::string& text, const fs::path& base_dir) {
    Config cfg;
    cfg.base_dir = base_dir;
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string line = trim(nl == std::string::npos ? text.substr(pos)
                                                        : text.substr(pos, nl - pos));
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(line_no) +
                               ": expected key=value, got \"" + line + "\"");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw config_error("config line " + std::to_string(line_no) + ": empty key");
        if (cfg.values.count(key))
            throw config_error("config line " + std::to_string(line_no) + ": duplicate key " + key);
        cfg.values[key] = value;
    }
    return cfg;
}

Config Config::load(const fs::path& path) {
    if (!fs::exists(path)) throw config_error("config file not found: " + path.string());
    return from_string(read_text_file(path), path.has_parent_path() ? path.parent_path() : ".");
}

bool Config::has(const std::string& key) const { return values.count(key) > 0; }

const std::string& Config::get(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw config_error("config: missing required key " + key);
    return it->second;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

long Config::get_int(const std::string& key, long fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    return parse_long(it->second, "config key " + key);
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    return parse_double(it->second, "config key " + key);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw config_error("config key " + key + ": expected true/false, got " + it->second);
}

std::vector<int> Config::get_ints(const std::string& key, const std::vector<int>& fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    std::vector<int> out;
    for (const auto& tok : split(it->second, ','))
        out.push_back(static_cast<int>(parse_long(trim(tok), "config key " + key)));
    if (out.empty()) throw config_error("config key " + key + ": empty list");
    return out;
}

std::vector<double> Config::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    std::vector<double> out;
    for (const auto& tok : split(it->second, ','))
        out.push_back(parse_double(trim(tok), "config key " + key));
    if (out.empty()) throw config_error("config key " + key + ": empty list");
    return out;
}

fs::path Config::get_path(const std::string& key) const {
    const fs::path p = get(key);
    return p.is_absolute() ? p : base_dir / p;
}

fs::path Config::get_path(const std::string& key, const fs::path& fallback) const {
    if (!has(key)) return fallback;
    return get_path(key);
}

std::string Config::canonical() const {
    std::string out;
    for (const auto& [k, v] : values) out += k + "=" + v + "\n";
    return out;
}

std::string Config::hash() const { return hash_hex(fnv1a(canonical())); }

std::uint64_t Config::seed() const {
    const long v = parse_long(get("seed"), "config key seed");
    if (v < 0) throw config_error("config key seed: must be non-negative");
    return static_cast<std::uint64_t>(v);
}

// --- heatmap --------------------------------------------------------------

Heatmap make_heatmap(const TileSelection& selection,
                     const std::function<double(const TileId&)>& p_urban) {
    if (selection.tiles.empty()) throw data_error("heatmap: empty tile selection");
    Heatmap hm;
    hm.zoom = selection.zoom;
    int x1 = selection.tiles[0].x, y1 = selection.tiles[0].y;
    hm.x0 = x1;
    hm.y0 = y1;
    for (const auto& t : selection.tiles) {
        hm.x0 = std::min(hm.x0, t.x);
        hm.y0 = std::min(hm.y0, t.y);
        x1 = std::max(x1, t.x);
        y1 = std::max(y1, t.y);
    }
    hm.w = x1 - hm.x0 + 1;
    hm.h = y1 - hm.y0 + 1;
    hm.selected.assign(static_cast<std::size_t>(hm.w) * static_cast<std::size_t>(hm.h), 0);
    hm.p.assign(hm.selected.size(), 0.0);
    for (const auto& t : selection.tiles) {
        const std::size_t i = hm.idx(t.y - hm.y0, t.x - hm.x0);
        hm.selected[i] = 1;
        const double p = p_urban(t);
        if (!(p >= 0.0 && p <= 1.0))
            throw numeric_error("heatmap: classifier returned probability outside [0,1]");
        hm.p[i] = p;
    }
    return hm;
}

std::string heatmap_pgm(const Heatmap& hm) {
    std::string out = "P2\n# p_urban raster, zoom " + std::to_string(hm.zoom) + ", origin tile " +
                      std::to_string(hm.x0) + " " + std::to_string(hm.y0) + ", 0 = no data\n" +
                      std::to_string(hm.w) + " " + std::to_string(hm.h) + "\n255\n";
    for (int row = 0; row < hm.h; ++row) {
        for (int col = 0; col < hm.w; ++col) {
            const std::size_t i = hm.idx(row, col);
            const int v = hm.selected[i]
                              ? 1 + static_cast<int>(std::lround(hm.p[i] * 254.0))
                              : 0;
            out += std::to_string(v);
            out += col + 1 == hm.w ? '\n' : ' ';
        }
    }
    return out;
}

std::string heatmap_csv(const Heatmap& hm) {
    std::string out = "z,x,y,selected,p_urban\n";
    for (int row = 0; row < hm.h; ++row)
        for (int col = 0; col < hm.w; ++col) {
            const std::size_t i = hm.idx(row, col);
            out += std::to_string(hm.zoom) + "," + std::to_string(hm.x0 + col) + "," +
                   std::to_string(hm.y0 + row) + "," + (hm.selected[i] ? "1" : "0") + ",";
            if (hm.selected[i]) out += fmt_double(hm.p[i]);
            out += "\n";
        }
    return out;
}

// --- workdir plumbing -----------------------------------------------------

namespace {

class WorkdirLock {
  public:
    explicit WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
        fs::create_directories(workdir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw config_error("workdir is locked: " + path_.string() +
                               " exists (another command is running; delete it if stale)");
    }
    ~WorkdirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

  private:
    fs::path path_;
    int fd_ = -1;
};

struct Manifest {
    njson artifacts = njson::object();

    static Manifest load(const fs::path& workdir) {
        Manifest m;
        const fs::path p = workdir / "manifest.json";
        if (fs::exists(p)) {
            try {
                m.artifacts = njson::parse(read_text_file(p)).at("artifacts");
            } catch (const njson::exception& e) {
                throw data_error("manifest " + p.string() + " is corrupt: " + e.what());
            }
        }
        return m;
    }

    void record(const std::string& rel, const std::string& command, const std::string& chash,
                const std::map<std::string, std::string>& inputs) {
        njson entry;
        entry["command"] = command;
        entry["config_hash"] = chash;
        entry["inputs"] = njson::object();
        for (const auto& [k, v] : inputs) entry["inputs"][k] = v;
        artifacts[rel] = entry;
    }

    std::string hash_of(const std::string& rel) const {
        if (!artifacts.contains(rel)) return "";
        return artifacts.at(rel).value("config_hash", "");
    }

    void save(const fs::path& workdir) const {
        njson j;
        j["artifacts"] = artifacts;
        write_text_file(workdir / "manifest.json", j.dump(1) + "\n");
    }
};

struct Ctx {
    const Config& cfg;
    std::string variable;  // resolved target variable ("" until needed)
    fs::path workdir;
    std::string chash;
    Manifest manifest;

    fs::path need(const std::string& rel, const std::string& producer) const {
        const fs::path p = workdir / rel;
        if (!fs::exists(p))
            throw data_error("missing " + p.string() + "; run `read-pipeline " + producer +
                             "` first");
        return p;
    }

    void record(const std::string& rel, const std::string& command,
                const std::vector<std::string>& input_rels) {
        std::map<std::string, std::string> inputs;
        for (const auto& r : input_rels) inputs[r] = manifest.hash_of(r);
        manifest.record(rel, command, chash, inputs);
    }

    const std::string& target_variable() {
        if (variable.empty())
            throw config_error(
                "no target variable: set eval.variable in the config or pass --variable");
        return variable;
    }
};

ConvNetSpec net_spec(const Config& cfg, int num_classes) {
    ConvNetSpec s;
    s.input_size = static_cast<int>(cfg.get_int("net.input_size", 64));
    s.channels = cfg.get_ints("net.channels", {8, 16, 32});
    s.embedding_dim = static_cast<int>(cfg.get_int("net.embedding_dim", 32));
    s.num_classes = num_classes;
    s.validate();
    return s;
}

MeanTeacherConfig mt_config(const Config& cfg, const std::string& section, std::uint64_t seed) {
    const bool pruner = section == "pruner";
    MeanTeacherConfig m;
    m.epochs = static_cast<int>(cfg.get_int(section + ".epochs", pruner ? 30 : 60));
    m.rampup_epochs = static_cast<int>(cfg.get_int(section + ".rampup_epochs", 40));
    m.rampup_target = cfg.get_double(section + ".rampup_target", pruner ? 0.0 : 12.5);
    m.rampup_shape = cfg.get(section + ".rampup_shape", "linear");
    m.ema_alpha = cfg.get_double(section + ".ema_alpha", 0.99);
    m.labeled_batch = static_cast<int>(cfg.get_int(section + ".labeled_batch", 32));
    m.unlabeled_batch = static_cast<int>(cfg.get_int(section + ".unlabeled_batch", 32));
    m.lr = cfg.get_double(section + ".lr", 0.01);
    m.momentum = cfg.get_double(section + ".momentum", 0.9);
    m.test_fraction = cfg.get_double(section + ".test_fraction", 0.2);
    m.include_labeled_in_consistency =
        cfg.get_bool(section + ".include_labeled_in_consistency", true);
    m.seed = mix_seed(seed, fnv1a(section));
    return m;
}

std::vector<TileSelection> load_selection_file(const fs::path& p) {
    auto sel = parse_tile_selection_csv(read_text_file(p));
    if (sel.empty()) throw data_error(p.string() + " holds no tiles");
    return sel;
}

// All selected tile images, selection order (district major, then y, x).
struct Corpus {
    std::vector<TileId> tiles;
    std::vector<std::string> district;  // parallel
    std::vector<Image> raw;             // [0,1]
    std::map<TileId, std::size_t> index;
};

Corpus load_corpus(const fs::path& tiles_dir, const std::vector<TileSelection>& selections) {
    Corpus c;
    for (const auto& sel : selections)
        for (const auto& t : sel.tiles) {
            const fs::path p = tile_image_path(tiles_dir, sel.district_id, t);
            if (!fs::exists(p))
                throw data_error("tile image missing: " + p.string() +
                                 " (expected <district>/<z>_<x>_<y>.png under paths.tiles)");
            c.index[t] = c.tiles.size();
            c.tiles.push_back(t);
            c.district.push_back(sel.district_id);
            c.raw.push_back(load_png(p));
        }
    return c;
}

NormStats corpus_norm_stats(const Corpus& corpus) {
    std::vector<const Image*> ptrs;
    ptrs.reserve(corpus.raw.size());
    for (const auto& img : corpus.raw) ptrs.push_back(&img);
    return compute_norm_stats(ptrs);
}

// Forward a set of normalized images through the checkpoint in fixed chunks;
// returns per-image class probabilities and embeddings.
struct NetOutputs {
    int num_classes = 0, embedding_dim = 0;
    std::vector<double> probs;       // n × C
    std::vector<double> embeddings;  // n × E
};

NetOutputs run_net(const ConvNetSpec& spec, const ParamSet& params,
                   const std::vector<Image>& images) {
    NetOutputs out;
    out.num_classes = spec.num_classes;
    out.embedding_dim = spec.embedding_dim;
    const std::size_t chunk = 64;
    ForwardCache cache;
    for (std::size_t at = 0; at < images.size(); at += chunk) {
        const std::size_t hi = std::min(images.size(), at + chunk);
        std::vector<const Image*> ptrs;
        for (std::size_t i = at; i < hi; ++i) ptrs.push_back(&images[i]);
        const Batch batch = make_batch(ptrs);
        forward(spec, params, batch, cache);
        out.probs.insert(out.probs.end(), cache.probs.begin(), cache.probs.end());
        out.embeddings.insert(out.embeddings.end(), cache.embeddings.begin(),
                              cache.embeddings.end());
    }
    return out;
}

std::vector<TrainSample> labeled_samples(const Corpus& corpus, const NormStats& stats,
                                         const std::vector<SoftLabel>& labels, bool binary) {
    std::vector<TrainSample> out;
    for (const auto& lab : labels) {
        const auto it = corpus.index.find(lab.tile);
        if (it == corpus.index.end())
            throw data_error("labeled tile " + std::to_string(lab.tile.z) + "/" +
                             std::to_string(lab.tile.x) + "/" + std::to_string(lab.tile.y) +
                             " is not among the selected tiles; re-run select-tiles or fix the "
                             "labels file");
        TrainSample s;
        s.image = normalize_image(corpus.raw[it->second], stats);
        if (binary)
            s.target = lab.inhabited_majority ? std::vector<double>{1.0, 0.0}
                                              : std::vector<double>{0.0, 1.0};
        else
            s.target = {lab.probs[0], lab.probs[1], lab.probs[2]};
        out.push_back(std::move(s));
    }
    return out;
}

// --- commands -------------------------------------------------------------

void cmd_ingest(Ctx& ctx) {
    const fs::path src = ctx.cfg.get_path("paths.districts");
    if (!fs::exists(src)) throw data_error("paths.districts not found: " + src.string());
    const auto districts = load_districts(src);
    write_text_file(ctx.workdir / "districts.geojson", districts_geojson(districts));
    ctx.record("districts.geojson", "ingest", {});
}

void cmd_select_tiles(Ctx& ctx) {
    const fs::path src = ctx.need("districts.geojson", "ingest");
    const auto districts = load_districts(src);
    const int zoom = static_cast<int>(ctx.cfg.get_int("tiles.zoom", 15));
    std::vector<TileSelection> selections;
    selections.reserve(districts.size());
    for (const auto& d : districts) selections.push_back(select_tiles(d, zoom));
    fs::create_directories(ctx.workdir / "tiles");
    write_text_file(ctx.workdir / "tiles" / "selection.csv", tile_selection_csv(selections));
    ctx.record("tiles/selection.csv", "select-tiles", {"districts.geojson"});
}

void cmd_train_extractor(Ctx& ctx) {
    if (ctx.cfg.get("extractor.mode", "builtin-convnet") == "external-embeddings")
        throw config_error("extractor.mode = external-embeddings: nothing to train; run embed");
    const auto selections = load_selection_file(ctx.need("tiles/selection.csv", "select-tiles"));
    const Corpus corpus = load_corpus(ctx.cfg.get_path("paths.tiles"), selections);
    const NormStats stats = corpus_norm_stats(corpus);

    const fs::path class_votes = ctx.cfg.get_path("paths.labels_class");
    if (!fs::exists(class_votes))
        throw data_error("paths.labels_class not found: " + class_votes.string());
    const auto labels = load_labels(class_votes, std::nullopt);
    const auto labeled = labeled_samples(corpus, stats, labels, false);

    std::vector<Image> pool;
    std::set<TileId> labeled_tiles;
    for (const auto& lab : labels) labeled_tiles.insert(lab.tile);
    for (std::size_t i = 0; i < corpus.raw.size(); ++i)
        if (!labeled_tiles.count(corpus.tiles[i]))
            pool.push_back(normalize_image(corpus.raw[i], stats));

    const ConvNetSpec spec = net_spec(ctx.cfg, 3);
    const auto result = train(spec, labeled, pool, mt_config(ctx.cfg, "extractor", ctx.cfg.seed()));

    fs::create_directories(ctx.workdir / "models");
    fs::create_directories(ctx.workdir / "reports");
    save_checkpoint(ctx.workdir / "models" / "extractor.bin", spec, result.teacher);
    write_text_file(ctx.workdir / "models" / "extractor_norm.csv", norm_stats_csv(stats));
    write_text_file(ctx.workdir / "reports" / "extractor_train.csv",
                    train_report_csv(result.report));
    ctx.record("models/extractor.bin", "train-extractor", {"tiles/selection.csv"});
    ctx.record("models/extractor_norm.csv", "train-extractor", {"tiles/selection.csv"});
    ctx.record("reports/extractor_train.csv", "train-extractor", {"tiles/selection.csv"});
}

void cmd_train_pruner(Ctx& ctx) {
    const auto selections = load_selection_file(ctx.need("tiles/selection.csv", "select-tiles"));
    const Corpus corpus = load_corpus(ctx.cfg.get_path("paths.tiles"), selections);
    const NormStats stats = corpus_norm_stats(corpus);

    const fs::path class_votes = ctx.cfg.get_path("paths.labels_class");
    if (!fs::exists(class_votes))
        throw data_error("paths.labels_class not found: " + class_votes.string());
    std::optional<fs::path> binary_votes;
    if (ctx.cfg.has("paths.labels_binary")) binary_votes = ctx.cfg.get_path("paths.labels_binary");
    const auto labels = load_labels(class_votes, binary_votes);
    const auto labeled = labeled_samples(corpus, stats, labels, true);

    const ConvNetSpec spec = net_spec(ctx.cfg, 2);
    const auto result = train_pruner(spec, labeled, mt_config(ctx.cfg, "pruner", ctx.cfg.seed()));

    fs::create_directories(ctx.workdir / "models");
    fs::create_directories(ctx.workdir / "reports");
    save_checkpoint(ctx.workdir / "models" / "pruner.bin", spec, result.params);
    write_text_file(ctx.workdir / "models" / "pruner_norm.csv", norm_stats_csv(stats));
    write_text_file(ctx.workdir / "reports" / "pruner_train.csv", train_report_csv(result.report));
    ctx.record("models/pruner.bin", "train-pruner", {"tiles/selection.csv"});
    ctx.record("models/pruner_norm.csv", "train-pruner", {"tiles/selection.csv"});
    ctx.record("reports/pruner_train.csv", "train-pruner", {"tiles/selection.csv"});
}

void cmd_embed(Ctx& ctx) {
    const auto selections = load_selection_file(ctx.need("tiles/selection.csv", "select-tiles"));
    std::vector<EmbeddingRecord> records;

    if (ctx.cfg.get("extractor.mode", "builtin-convnet") == "external-embeddings") {
        const fs::path src = ctx.cfg.get_path("paths.embeddings");
        if (!fs::exists(src)) throw data_error("paths.embeddings not found: " + src.string());
        const auto external = load_embeddings(src);
        std::map<TileId, const EmbeddingRecord*> by_tile;
        for (const auto& r : external) by_tile[r.tile] = &r;
        for (const auto& sel : selections)
            for (const auto& t : sel.tiles) {
                const auto it = by_tile.find(t);
                if (it == by_tile.end())
                    throw data_error("external embeddings lack selected tile " +
                                     std::to_string(t.z) + "/" + std::to_string(t.x) + "/" +
                                     std::to_string(t.y));
                EmbeddingRecord r = *it->second;
                r.district_id = sel.district_id;
                records.push_back(std::move(r));
            }
    } else {
        const auto [spec, params] =
            load_checkpoint(ctx.need("models/extractor.bin", "train-extractor"));
        const NormStats stats = parse_norm_stats_csv(
            read_text_file(ctx.need("models/extractor_norm.csv", "train-extractor")));
        const Corpus corpus = load_corpus(ctx.cfg.get_path("paths.tiles"), selections);
        std::vector<Image> normalized;
        normalized.reserve(corpus.raw.size());
        for (const auto& img : corpus.raw) normalized.push_back(normalize_image(img, stats));
        const NetOutputs out = run_net(spec, params, normalized);
        for (std::size_t i = 0; i < corpus.tiles.size(); ++i) {
            EmbeddingRecord r;
            r.tile = corpus.tiles[i];
            r.district_id = corpus.district[i];
            r.vec.resize(static_cast<std::size_t>(out.embedding_dim));
            for (int j = 0; j < out.embedding_dim; ++j)
                r.vec[static_cast<std::size_t>(j)] = static_cast<float>(
                    out.embeddings[i * static_cast<std::size_t>(out.embedding_dim) +
                                   static_cast<std::size_t>(j)]);
            records.push_back(std::move(r));
        }
    }

    fs::create_directories(ctx.workdir / "embeddings");
    save_embeddings_binary(ctx.workdir / "embeddings" / "embeddings.bin", records);
    ctx.record("embeddings/embeddings.bin", "embed",
               {"tiles/selection.csv", "models/extractor.bin"});
}

void cmd_prune(Ctx& ctx) {
    const auto selections = load_selection_file(ctx.need("tiles/selection.csv", "select-tiles"));
    const std::string mode = ctx.cfg.get("prune.mode", "model");
    const double threshold = ctx.cfg.get_double("prune.threshold", 0.5);

    std::vector<PrunedSelection> pruned;
    if (mode == "none") {
        for (const auto& sel : selections) {
            PrunedSelection p;
            p.district_id = sel.district_id;
            p.kept = sel.tiles;
            pruned.push_back(std::move(p));
        }
    } else if (mode == "model") {
        const auto [spec, params] = load_checkpoint(ctx.need("models/pruner.bin", "train-pruner"));
        const NormStats stats = parse_norm_stats_csv(
            read_text_file(ctx.need("models/pruner_norm.csv", "train-pruner")));
        const Corpus corpus = load_corpus(ctx.cfg.get_path("paths.tiles"), selections);
        std::vector<Image> normalized;
        normalized.reserve(corpus.raw.size());
        for (const auto& img : corpus.raw) normalized.push_back(normalize_image(img, stats));
        const NetOutputs out = run_net(spec, params, normalized);
        std::map<TileId, double> p_inhabited;
        for (std::size_t i = 0; i < corpus.tiles.size(); ++i)
            p_inhabited[corpus.tiles[i]] =
                out.probs[i * static_cast<std::size_t>(out.num_classes)];
        for (const auto& sel : selections)
            pruned.push_back(prune(
                sel, [&](const TileId& t) { return p_inhabited.at(t); }, threshold));
    } else {
        throw config_error("prune.mode must be model or none, got " + mode);
    }

    // Kept tiles keep their selection rows (vertex hit counts included).
    std::vector<TileSelection> kept;
    for (std::size_t d = 0; d < selections.size(); ++d) {
        std::set<TileId> keep(pruned[d].kept.begin(), pruned[d].kept.end());
        TileSelection ks;
        ks.district_id = selections[d].district_id;
        ks.zoom = selections[d].zoom;
        for (std::size_t i = 0; i < selections[d].tiles.size(); ++i)
            if (keep.count(selections[d].tiles[i])) {
                ks.tiles.push_back(selections[d].tiles[i]);
                ks.vertex_hits.push_back(selections[d].vertex_hits[i]);
            }
        kept.push_back(std::move(ks));
    }

    fs::create_directories(ctx.workdir / "reports");
    write_text_file(ctx.workdir / "tiles" / "pruned.csv", tile_selection_csv(kept));
    write_text_file(ctx.workdir / "reports" / "prune_report.csv", prune_report_csv(pruned));
    ctx.record("tiles/pruned.csv", "prune", {"tiles/selection.csv", "models/pruner.bin"});
    ctx.record("reports/prune_report.csv", "prune",
               {"tiles/selection.csv", "models/pruner.bin"});
}

// Embeddings of the kept tiles, grouped per district in pruned order.
struct KeptEmbeddings {
    std::vector<std::string> district_ids;
    std::vector<Matrix> tiles;  // parallel; n_i × E
    std::size_t dim = 0;
};

KeptEmbeddings kept_embeddings(Ctx& ctx) {
    const auto pruned = load_selection_file(ctx.need("tiles/pruned.csv", "prune"));
    const auto records = load_embeddings(ctx.need("embeddings/embeddings.bin", "embed"));
    if (records.empty()) throw data_error("embeddings file holds no records; re-run embed");
    std::map<TileId, const EmbeddingRecord*> by_tile;
    for (const auto& r : records) by_tile[r.tile] = &r;

    KeptEmbeddings out;
    out.dim = records[0].vec.size();
    for (const auto& sel : pruned) {
        if (sel.tiles.empty())
            throw data_error("district " + sel.district_id +
                             " has no tiles after pruning; lower tiles.zoom or check its polygon");
        Matrix m(sel.tiles.size(), out.dim);
        for (std::size_t i = 0; i < sel.tiles.size(); ++i) {
            const auto it = by_tile.find(sel.tiles[i]);
            if (it == by_tile.end())
                throw data_error("no embedding for kept tile " + std::to_string(sel.tiles[i].z) +
                                 "/" + std::to_string(sel.tiles[i].x) + "/" +
                                 std::to_string(sel.tiles[i].y) + "; re-run embed");
            for (std::size_t j = 0; j < out.dim; ++j)
                m.at(i, j) = static_cast<double>(it->second->vec[j]);
        }
        out.district_ids.push_back(sel.district_id);
        out.tiles.push_back(std::move(m));
    }
    return out;
}

PcaModel pca_prefix(const PcaModel& m, int k) {
    PcaModel out = m;
    out.k = k;
    out.components.resize(static_cast<std::size_t>(k));
    out.eigenvalues.resize(static_cast<std::size_t>(k));
    out.explained_variance_ratio.resize(static_cast<std::size_t>(k));
    return out;
}

void cmd_fit_pca(Ctx& ctx) {
    const KeptEmbeddings kept = kept_embeddings(ctx);
    std::size_t rows = 0;
    for (const auto& m : kept.tiles) rows += m.rows;
    Matrix all(rows, kept.dim);
    std::size_t at = 0;
    for (const auto& m : kept.tiles) {
        std::copy(m.data.begin(), m.data.end(),
                  all.data.begin() + static_cast<std::ptrdiff_t>(at * kept.dim));
        at += m.rows;
    }

    const int k_max = static_cast<int>(ctx.cfg.get_int("pca.k_max", 10));
    const double target = ctx.cfg.get_double("pca.target", 0.80);
    const std::string kspec = ctx.cfg.get("pca.k", "auto");
    const int cap = static_cast<int>(std::min<std::size_t>(
        static_cast<std::size_t>(k_max), std::min(all.rows - 1, kept.dim)));

    PcaModel model;
    if (kspec == "auto") {
        model = fit_pca(all, cap);
        model = pca_prefix(model, choose_k(model, target, 1, k_max));
    } else {
        const int k = static_cast<int>(parse_long(kspec, "config key pca.k"));
        model = fit_pca(all, k);
    }

    fs::create_directories(ctx.workdir / "pca");
    write_text_file(ctx.workdir / "pca" / "pca.csv", pca_model_csv(model));
    ctx.record("pca/pca.csv", "fit-pca", {"embeddings/embeddings.bin", "tiles/pruned.csv"});
}

void cmd_represent(Ctx& ctx) {
    const KeptEmbeddings kept = kept_embeddings(ctx);
    const PcaModel pca = parse_pca_model_csv(read_text_file(ctx.need("pca/pca.csv", "fit-pca")));

    std::vector<DistrictRepresentation> reps;
    std::vector<double> row(kept.dim);
    for (std::size_t d = 0; d < kept.district_ids.size(); ++d) {
        Matrix reduced(kept.tiles[d].rows, static_cast<std::size_t>(pca.k));
        for (std::size_t i = 0; i < kept.tiles[d].rows; ++i) {
            for (std::size_t j = 0; j < kept.dim; ++j) row[j] = kept.tiles[d].at(i, j);
            const auto red = pca_transform(pca, row);
            for (std::size_t j = 0; j < red.size(); ++j) reduced.at(i, j) = red[j];
        }
        reps.push_back(represent(ReducedDistrict{kept.district_ids[d], std::move(reduced)},
                                 StatMask{}));
    }

    fs::create_directories(ctx.workdir / "repr");
    write_text_file(ctx.workdir / "repr" / "representations.csv",
                    representations_csv(reps, pca.k));
    ctx.record("repr/representations.csv", "represent",
               {"embeddings/embeddings.bin", "tiles/pruned.csv", "pca/pca.csv"});
}

void cmd_train_regressor(Ctx& ctx) {
    const std::string& variable = ctx.target_variable();
    int k = 0;
    const auto reps = parse_representations_csv(
        read_text_file(ctx.need("repr/representations.csv", "represent")), &k);
    const fs::path demo_path = ctx.cfg.get_path("paths.demographics");
    if (!fs::exists(demo_path))
        throw data_error("paths.demographics not found: " + demo_path.string());
    const Dataset data = log_targets(load_demographics(demo_path), variable, reps);

    const std::string kind = ctx.cfg.get("regress.regressor", "gbt");
    RegressorModel model;
    if (kind == "ridge") {
        model = ridge_fit(data, ctx.cfg.get_double("regress.lambda", 1.0));
    } else if (kind == "lasso") {
        model = lasso_fit(data, ctx.cfg.get_double("regress.lambda", 0.01),
                          ctx.cfg.get_double("regress.lasso_tol", 1e-6));
    } else if (kind == "gbt") {
        GbtParams params;
        params.trees = static_cast<int>(ctx.cfg.get_int("regress.gbt_trees", 200));
        params.depth = static_cast<int>(ctx.cfg.get_int("regress.gbt_depth", 3));
        params.lr = ctx.cfg.get_double("regress.gbt_lr", 0.1);
        model = gbt_fit(data, params);
    } else {
        throw config_error("regress.regressor must be ridge, lasso, or gbt, got " + kind);
    }

    std::vector<double> y;
    for (const auto& rowd : data.rows) y.push_back(rowd.y);
    const auto yhat = predict_all(model, data);

    fs::create_directories(ctx.workdir / "models");
    fs::create_directories(ctx.workdir / "reports");
    save_regressor(ctx.workdir / "models" / ("regressor_" + variable + ".bin"), model);
    nlohmann::ordered_json j;
    j["variable"] = variable;
    j["regressor"] = kind;
    j["n_districts"] = data.rows.size();
    j["train_mse"] = mse(y, yhat);
    j["train_r2"] = r2(y, yhat);
    write_text_file(ctx.workdir / "reports" / ("train_regressor_" + variable + ".json"),
                    j.dump(1) + "\n");
    ctx.record("models/regressor_" + variable + ".bin", "train-regressor",
               {"repr/representations.csv"});
    ctx.record("reports/train_regressor_" + variable + ".json", "train-regressor",
               {"repr/representations.csv"});
}

EvalConfig eval_config(const Config& cfg) {
    EvalConfig ec;
    ec.regressor = cfg.get("regress.regressor", "gbt");
    ec.trials = static_cast<int>(cfg.get_int("regress.trials", 20));
    ec.folds = static_cast<int>(cfg.get_int("regress.folds", 4));
    ec.test_fraction = cfg.get_double("regress.test_fraction", 0.2);
    ec.k_max = static_cast<int>(cfg.get_int("regress.k_max", 10));
    ec.lambdas = cfg.get_doubles("regress.lambdas", {});
    ec.gbt_depths = cfg.get_ints("regress.gbt_depths", {2, 3, 4});
    ec.gbt_trees = static_cast<int>(cfg.get_int("regress.gbt_trees", 200));
    ec.gbt_lr = cfg.get_double("regress.gbt_lr", 0.1);
    ec.lasso_tol = cfg.get_double("regress.lasso_tol", 1e-6);
    ec.transductive_pca = cfg.get_bool("regress.transductive_pca", false);
    ec.seed = cfg.seed();
    return ec;
}

std::vector<DistrictEmbeddings> eval_inputs(Ctx& ctx, const std::string& variable) {
    // Evaluation must not mix artifacts produced under different configs.
    const std::string h_embed = ctx.manifest.hash_of("embeddings/embeddings.bin");
    const std::string h_prune = ctx.manifest.hash_of("tiles/pruned.csv");
    if (!h_embed.empty() && !h_prune.empty() && h_embed != h_prune)
        throw data_error("mixed lineage: embeddings/embeddings.bin was produced under config " +
                         h_embed + " but tiles/pruned.csv under " + h_prune +
                         "; re-run embed and prune with one config");

    const KeptEmbeddings kept = kept_embeddings(ctx);
    const fs::path demo_path = ctx.cfg.get_path("paths.demographics");
    if (!fs::exists(demo_path))
        throw data_error("paths.demographics not found: " + demo_path.string());
    const DemographicsTable demo = load_demographics(demo_path);
    const std::size_t var = demo.find_variable(variable);

    std::map<std::string, double> value_of;
    for (std::size_t i = 0; i < demo.district_ids.size(); ++i)
        value_of[demo.district_ids[i]] = demo.values[i][var];

    std::vector<DistrictEmbeddings> out;
    for (std::size_t d = 0; d < kept.district_ids.size(); ++d) {
        const auto it = value_of.find(kept.district_ids[d]);
        if (it == value_of.end())
            throw data_error("demographics table has no district " + kept.district_ids[d]);
        out.push_back(DistrictEmbeddings{kept.district_ids[d], kept.tiles[d], it->second});
    }
    return out;
}

void cmd_evaluate(Ctx& ctx) {
    const std::string& variable = ctx.target_variable();
    const auto districts = eval_inputs(ctx, variable);
    const EvalConfig ec = eval_config(ctx.cfg);
    const EvalReport report = evaluate(districts, variable, ec);

    fs::create_directories(ctx.workdir / "reports");
    const std::string stem = "eval_" + variable + "_" + ec.regressor;
    write_text_file(ctx.workdir / "reports" / (stem + ".json"), eval_report_json(report));
    write_text_file(ctx.workdir / "reports" / (stem + ".txt"), eval_report_text(report));
    ctx.record("reports/" + stem + ".json", "evaluate",
               {"embeddings/embeddings.bin", "tiles/pruned.csv"});
    ctx.record("reports/" + stem + ".txt", "evaluate",
               {"embeddings/embeddings.bin", "tiles/pruned.csv"});
}

void cmd_predict(Ctx& ctx) {
    const std::string& variable = ctx.target_variable();
    const RegressorModel model = load_regressor(
        ctx.need("models/regressor_" + variable + ".bin", "train-regressor"));
    int k = 0;
    const auto reps = parse_representations_csv(
        read_text_file(ctx.need("repr/representations.csv", "represent")), &k);

    std::string csv = "district_id,log_prediction,prediction\n";
    for (const auto& rep : reps) {
        const double lg = predict(model, rep.r);
        csv += rep.district_id + "," + fmt_double(lg) + "," + fmt_double(std::exp(lg)) + "\n";
    }
    fs::create_directories(ctx.workdir / "reports");
    const std::string rel = "reports/predictions_" + variable + ".csv";
    write_text_file(ctx.workdir / rel, csv);
    ctx.record(rel, "predict",
               {"models/regressor_" + variable + ".bin", "repr/representations.csv"});
}

void cmd_ablate(Ctx& ctx) {
    const std::string& variable = ctx.target_variable();
    const auto districts = eval_inputs(ctx, variable);
    const auto rows = ablate(districts, variable, eval_config(ctx.cfg));

    fs::create_directories(ctx.workdir / "reports");
    write_text_file(ctx.workdir / "reports" / ("ablation_" + variable + ".json"),
                    ablation_json(rows));
    write_text_file(ctx.workdir / "reports" / ("ablation_" + variable + ".txt"),
                    ablation_table_text(rows));
    ctx.record("reports/ablation_" + variable + ".json", "ablate",
               {"embeddings/embeddings.bin", "tiles/pruned.csv"});
    ctx.record("reports/ablation_" + variable + ".txt", "ablate",
               {"embeddings/embeddings.bin", "tiles/pruned.csv"});
}

void cmd_heatmap(Ctx& ctx) {
    const std::string district = ctx.cfg.get("heatmap.district", "");
    if (district.empty()) throw config_error("heatmap: set heatmap.district in the config");
    const auto selections = load_selection_file(ctx.need("tiles/selection.csv", "select-tiles"));
    const TileSelection* sel = nullptr;
    for (const auto& s : selections)
        if (s.district_id == district) sel = &s;
    if (!sel) throw data_error("heatmap: district " + district + " is not in the selection");

    const auto [spec, params] =
        load_checkpoint(ctx.need("models/extractor.bin", "train-extractor"));
    const NormStats stats = parse_norm_stats_csv(
        read_text_file(ctx.need("models/extractor_norm.csv", "train-extractor")));

    const fs::path tiles_dir = ctx.cfg.get_path("paths.tiles");
    std::vector<Image> normalized;
    for (const auto& t : sel->tiles) {
        const fs::path p = tile_image_path(tiles_dir, district, t);
        if (!fs::exists(p)) throw data_error("tile image missing: " + p.string());
        normalized.push_back(normalize_image(load_png(p), stats));
    }
    const NetOutputs out = run_net(spec, params, normalized);
    std::map<TileId, double> p_urban;
    for (std::size_t i = 0; i < sel->tiles.size(); ++i)
        p_urban[sel->tiles[i]] = out.probs[i * static_cast<std::size_t>(out.num_classes)];

    const Heatmap hm = make_heatmap(*sel, [&](const TileId& t) { return p_urban.at(t); });
    fs::create_directories(ctx.workdir / "reports");
    write_text_file(ctx.workdir / "reports" / ("heatmap_" + district + ".pgm"), heatmap_pgm(hm));
    write_text_file(ctx.workdir / "reports" / ("heatmap_" + district + ".csv"), heatmap_csv(hm));
    ctx.record("reports/heatmap_" + district + ".pgm", "heatmap",
               {"tiles/selection.csv", "models/extractor.bin"});
    ctx.record("reports/heatmap_" + district + ".csv", "heatmap",
               {"tiles/selection.csv", "models/extractor.bin"});
}

void cmd_synth_world(Ctx& ctx) {
    SynthWorldSpec spec;
    spec.zoom = static_cast<int>(ctx.cfg.get_int("synth.zoom", spec.zoom));
    spec.origin_x = static_cast<int>(ctx.cfg.get_int("synth.origin_x", spec.origin_x));
    spec.origin_y = static_cast<int>(ctx.cfg.get_int("synth.origin_y", spec.origin_y));
    spec.districts_x = static_cast<int>(ctx.cfg.get_int("synth.districts_x", spec.districts_x));
    spec.districts_y = static_cast<int>(ctx.cfg.get_int("synth.districts_y", spec.districts_y));
    spec.tiles_x = static_cast<int>(ctx.cfg.get_int("synth.tiles_x", spec.tiles_x));
    spec.tiles_y = static_cast<int>(ctx.cfg.get_int("synth.tiles_y", spec.tiles_y));
    spec.tile_px = static_cast<int>(ctx.cfg.get_int("synth.tile_px", spec.tile_px));
    spec.uninhabited_fraction =
        ctx.cfg.get_double("synth.uninhabited_fraction", spec.uninhabited_fraction);
    spec.label_fraction = ctx.cfg.get_double("synth.label_fraction", spec.label_fraction);
    spec.votes_per_tile =
        static_cast<int>(ctx.cfg.get_int("synth.votes_per_tile", spec.votes_per_tile));
    spec.vote_noise = ctx.cfg.get_double("synth.vote_noise", spec.vote_noise);
    spec.coeff_a = ctx.cfg.get_double("synth.coeff_a", spec.coeff_a);
    spec.coeff_b = ctx.cfg.get_double("synth.coeff_b", spec.coeff_b);
    spec.noise_sd = ctx.cfg.get_double("synth.noise_sd", spec.noise_sd);
    spec.seed = ctx.cfg.seed();

    const fs::path out = ctx.cfg.get_path("synth.out", ctx.workdir / "synth");
    write_synth_world(make_synth_world(spec), out);
    ctx.record("synth", "synth-world", {});
}

}  // namespace

const std::vector<std::string> kPipelineCommands = {
    "ingest",  "select-tiles", "train-extractor", "train-pruner", "embed",
    "prune",   "fit-pca",      "represent",       "train-regressor", "evaluate",
    "predict", "ablate",       "heatmap",         "synth-world"};

void run_command(const std::string& command, const Config& config,
                 const std::string& variable_override) {
    if (std::find(kPipelineCommands.begin(), kPipelineCommands.end(), command) ==
        kPipelineCommands.end())
        throw config_error("unknown command: " + command);

    Ctx ctx{config,
            variable_override.empty() ? config.get("eval.variable", "") : variable_override,
            config.get_path("paths.workdir"),
            config.hash(),
            Manifest{}};
    const WorkdirLock lock(ctx.workdir);
    ctx.manifest = Manifest::load(ctx.workdir);

    if (command == "ingest")
        cmd_ingest(ctx);
    else if (command == "select-tiles")
        cmd_select_tiles(ctx);
    else if (command == "train-extractor")
        cmd_train_extractor(ctx);
    else if (command == "train-pruner")
        cmd_train_pruner(ctx);
    else if (command == "embed")
        cmd_embed(ctx);
    else if (command == "prune")
        cmd_prune(ctx);
    else if (command == "fit-pca")
        cmd_fit_pca(ctx);
    else if (command == "represent")
        cmd_represent(ctx);
    else if (command == "train-regressor")
        cmd_train_regressor(ctx);
    else if (command == "evaluate")
        cmd_evaluate(ctx);
    else if (command == "predict")
        cmd_predict(ctx);
    else if (command == "ablate")
        cmd_ablate(ctx);
    else if (command == "heatmap")
        cmd_heatmap(ctx);
    else
        cmd_synth_world(ctx);

    ctx.manifest.save(ctx.workdir);
}

}  // namespace readcore
