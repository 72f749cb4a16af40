#include "read/imagery_store.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"

namespace readcore {

using nlohmann::json;

std::size_t DemographicsTable::find_variable(const std::string& name) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
        if (variables[i] == name) return i;
    throw config_error("unknown demographic variable: " + name);
}

namespace {

Ring parse_ring(const json& coords, const std::string& where) {
    if (!coords.is_array() || coords.size() < 4)
        throw data_error(where + ": ring must be an array of at least 4 positions");
    Ring ring;
    ring.reserve(coords.size());
    for (const auto& pos : coords) {
        if (!pos.is_array() || pos.size() < 2)
            throw data_error(where + ": position must be [lon, lat]");
        ring.push_back(GeoPoint{pos[0].get<double>(), pos[1].get<double>()});
    }
    return ring;
}

PolygonPart parse_polygon_part(const json& rings, const std::string& where) {
    if (!rings.is_array() || rings.empty())
        throw data_error(where + ": polygon needs at least one ring");
    PolygonPart part;
    part.shell = parse_ring(rings[0], where);
    for (std::size_t i = 1; i < rings.size(); ++i)
        part.holes.push_back(parse_ring(rings[i], where));
    return part;
}

}  // namespace

std::vector<DistrictPolygon> load_districts(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw data_error("districts file " + path.string() + ": " + e.what());
    }
    if (doc.value("type", "") != "FeatureCollection" || !doc.contains("features"))
        throw data_error("districts file " + path.string() + ": expected a FeatureCollection");

    std::vector<DistrictPolygon> out;
    std::set<std::string> seen;
    const auto& features = doc["features"];
    for (std::size_t fi = 0; fi < features.size(); ++fi) {
        const std::string where = "feature " + std::to_string(fi);
        const auto& f = features[fi];
        if (!f.contains("properties") || !f["properties"].contains("district_id"))
            throw data_error("districts file: " + where + " missing district_id property");
        DistrictPolygon poly;
        poly.district_id = f["properties"]["district_id"].get<std::string>();
        if (!seen.insert(poly.district_id).second)
            throw data_error("districts file: duplicate district_id " + poly.district_id);

        if (!f.contains("geometry") || f["geometry"].is_null())
            throw data_error("districts file: " + where + " has no geometry");
        const auto& geom = f["geometry"];
        const std::string gtype = geom.value("type", "");
        const auto& coords = geom["coordinates"];
        if (gtype == "Polygon") {
            poly.parts.push_back(parse_polygon_part(coords, where));
        } else if (gtype == "MultiPolygon") {
            for (const auto& part : coords) poly.parts.push_back(parse_polygon_part(part, where));
        } else {
            throw data_error("districts file: " + where + " has unsupported geometry type '" +
                             gtype + "'");
        }
        try {
            validate_polygon(poly);
        } catch (const data_error& e) {
            throw data_error("districts file: " + where + ": " + e.what());
        }
        out.push_back(std::move(poly));
    }
    return out;
}

std::string districts_geojson(const std::vector<DistrictPolygon>& districts) {
    json features = json::array();
    for (const auto& d : districts) {
        json parts = json::array();
        for (const auto& part : d.parts) {
            json rings = json::array();
            auto push_ring = [&rings](const Ring& ring) {
                json jr = json::array();
                for (const auto& p : ring) jr.push_back(json::array({p.lon, p.lat}));
                rings.push_back(std::move(jr));
            };
            push_ring(part.shell);
            for (const auto& hole : part.holes) push_ring(hole);
            parts.push_back(std::move(rings));
        }
        json geom;
        if (parts.size() == 1) {
            geom = {{"type", "Polygon"}, {"coordinates", parts[0]}};
        } else {
            geom = {{"type", "MultiPolygon"}, {"coordinates", parts}};
        }
        features.push_back({{"type", "Feature"},
                            {"properties", {{"district_id", d.district_id}}},
                            {"geometry", geom}});
    }
    json doc = {{"type", "FeatureCollection"}, {"features", features}};
    return doc.dump(1) + "\n";
}

namespace {

struct VoteRow {
    TileId tile;
    std::vector<std::string> votes;
};

std::vector<VoteRow> load_vote_rows(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    if (lines.empty() || lines[0] != "z,x,y,votes")
        throw data_error("labels file " + path.string() + ": expected header z,x,y,votes");
    std::vector<VoteRow> rows;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        auto cells = split(lines[li], ',');
        if (cells.size() != 4)
            throw data_error("labels file " + path.string() + " row " + std::to_string(li) +
                             ": expected 4 fields");
        const std::string ctx = path.string() + " row " + std::to_string(li);
        VoteRow row;
        row.tile.z = static_cast<int>(parse_long(cells[0], ctx));
        row.tile.x = static_cast<int>(parse_long(cells[1], ctx));
        row.tile.y = static_cast<int>(parse_long(cells[2], ctx));
        row.votes = split(cells[3], '|');
        if (row.votes.empty() || (row.votes.size() == 1 && row.votes[0].empty()))
            throw data_error("labels file " + ctx + ": no votes");
        rows.push_back(std::move(row));
    }
    return rows;
}

int class_index(const std::string& token, const std::string& ctx) {
    if (token == "urban") return 0;
    if (token == "rural") return 1;
    if (token == "uninhabited") return 2;
    throw data_error("unknown class token '" + token + "' in " + ctx);
}

}  // namespace

std::vector<SoftLabel> load_labels(const std::filesystem::path& class_votes_path,
                                   const std::optional<std::filesystem::path>& binary_votes_path) {
    auto class_rows = load_vote_rows(class_votes_path);
    std::vector<SoftLabel> out;
    out.reserve(class_rows.size());
    for (std::size_t ri = 0; ri < class_rows.size(); ++ri) {
        const auto& row = class_rows[ri];
        const std::string ctx =
            class_votes_path.string() + " row " + std::to_string(ri + 1);
        SoftLabel lab;
        lab.tile = row.tile;
        int inhabited = 0;
        for (const auto& tok : row.votes) {
            const int c = class_index(tok, ctx);
            lab.probs[static_cast<std::size_t>(c)] += 1.0;
            if (c != 2) ++inhabited;
        }
        const double n = static_cast<double>(row.votes.size());
        for (auto& p : lab.probs) p /= n;
        lab.inhabited_majority = 2 * inhabited >= static_cast<int>(row.votes.size());
        out.push_back(lab);
    }

    if (binary_votes_path) {
        auto bin_rows = load_vote_rows(*binary_votes_path);
        std::map<TileId, const VoteRow*> by_tile;
        for (const auto& r : bin_rows) by_tile[r.tile] = &r;
        for (auto& lab : out) {
            auto it = by_tile.find(lab.tile);
            if (it == by_tile.end())
                throw data_error("binary labels file " + binary_votes_path->string() +
                                 ": missing tile " + std::to_string(lab.tile.z) + "/" +
                                 std::to_string(lab.tile.x) + "/" + std::to_string(lab.tile.y));
            int inhabited = 0;
            for (const auto& tok : it->second->votes) {
                if (tok == "inhabited") {
                    ++inhabited;
                } else if (tok != "uninhabited") {
                    throw data_error("unknown binary token '" + tok + "' in " +
                                     binary_votes_path->string());
                }
            }
            lab.inhabited_majority = 2 * inhabited >= static_cast<int>(it->second->votes.size());
        }
    }
    return out;
}

static const char kEmbMagic[8] = {'R', 'E', 'A', 'D', 'E', 'M', 'B', '1'};

void save_embeddings_csv(const std::filesystem::path& path,
                         const std::vector<EmbeddingRecord>& records) {
    const std::size_t dim = records.empty() ? 0 : records[0].vec.size();
    std::string out = "z,x,y,district_id";
    for (std::size_t i = 0; i < dim; ++i) out += ",e" + std::to_string(i);
    out += '\n';
    for (const auto& r : records) {
        if (r.vec.size() != dim)
            throw data_error("embedding store: inconsistent dimension for district " +
                             r.district_id);
        out += std::to_string(r.tile.z) + ',' + std::to_string(r.tile.x) + ',' +
               std::to_string(r.tile.y) + ',' + r.district_id;
        for (float v : r.vec) {
            out += ',';
            out += fmt_float(v);
        }
        out += '\n';
    }
    write_text_file(path, out);
}

void save_embeddings_binary(const std::filesystem::path& path,
                            const std::vector<EmbeddingRecord>& records) {
    const std::size_t dim = records.empty() ? 0 : records[0].vec.size();
    std::string buf(kEmbMagic, sizeof(kEmbMagic));
    put_u32(buf, static_cast<std::uint32_t>(dim));
    put_u64(buf, records.size());
    for (const auto& r : records) {
        if (r.vec.size() != dim)
            throw data_error("embedding store: inconsistent dimension for district " +
                             r.district_id);
        put_u32(buf, static_cast<std::uint32_t>(r.tile.z));
        put_u32(buf, static_cast<std::uint32_t>(r.tile.x));
        put_u32(buf, static_cast<std::uint32_t>(r.tile.y));
        put_u32(buf, static_cast<std::uint32_t>(r.district_id.size()));
        buf += r.district_id;
        for (float v : r.vec) put_f32(buf, v);
    }
    write_text_file(path, buf);
}

namespace {

std::vector<EmbeddingRecord> load_embeddings_binary(const std::string& buf,
                                                    const std::string& name) {
    std::size_t off = sizeof(kEmbMagic);
    const std::uint32_t dim = get_u32(buf, off, name);
    const std::uint64_t count = get_u64(buf, off, name);
    std::vector<EmbeddingRecord> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string ctx = name + " record " + std::to_string(i);
        EmbeddingRecord r;
        r.tile.z = static_cast<int>(get_u32(buf, off, ctx));
        r.tile.x = static_cast<int>(get_u32(buf, off, ctx));
        r.tile.y = static_cast<int>(get_u32(buf, off, ctx));
        const std::uint32_t idlen = get_u32(buf, off, ctx);
        if (off + idlen > buf.size()) throw data_error("truncated data in " + ctx);
        r.district_id = buf.substr(off, idlen);
        off += idlen;
        r.vec.resize(dim);
        for (std::uint32_t d = 0; d < dim; ++d) r.vec[d] = get_f32(buf, off, ctx);
        out.push_back(std::move(r));
    }
    if (off != buf.size()) throw data_error(name + ": trailing bytes after last record");
    return out;
}

std::vector<EmbeddingRecord> load_embeddings_csv(const std::string& text,
                                                 const std::string& name) {
    std::vector<std::string> lines;
    {
        std::size_t start = 0;
        for (std::size_t i = 0; i <= text.size(); ++i) {
            if (i == text.size() || text[i] == '\n') {
                std::string_view line(text.data() + start, i - start);
                if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
                if (!line.empty()) lines.emplace_back(line);
                start = i + 1;
            }
        }
    }
    if (lines.empty()) throw data_error(name + ": empty embedding store");
    auto header = split(lines[0], ',');
    if (header.size() < 4 || header[0] != "z" || header[1] != "x" || header[2] != "y" ||
        header[3] != "district_id")
        throw data_error(name + ": bad embedding csv header");
    const std::size_t dim = header.size() - 4;
    for (std::size_t i = 0; i < dim; ++i)
        if (header[4 + i] != "e" + std::to_string(i))
            throw data_error(name + ": bad embedding column name '" + header[4 + i] + "'");

    std::vector<EmbeddingRecord> out;
    out.reserve(lines.size() - 1);
    for (std::size_t li = 1; li < lines.size(); ++li) {
        auto cells = split(lines[li], ',');
        const std::string ctx = name + " row " + std::to_string(li);
        if (cells.size() != 4 + dim)
            throw data_error(ctx + ": expected " + std::to_string(4 + dim) + " fields, got " +
                             std::to_string(cells.size()));
        EmbeddingRecord r;
        r.tile.z = static_cast<int>(parse_long(cells[0], ctx));
        r.tile.x = static_cast<int>(parse_long(cells[1], ctx));
        r.tile.y = static_cast<int>(parse_long(cells[2], ctx));
        r.district_id = cells[3];
        r.vec.resize(dim);
        for (std::size_t d = 0; d < dim; ++d)
            r.vec[d] = static_cast<float>(parse_double(cells[4 + d], ctx));
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
    const std::string buf = read_text_file(path);
    if (buf.size() >= sizeof(kEmbMagic) && std::memcmp(buf.data(), kEmbMagic, sizeof(kEmbMagic)) == 0)
        return load_embeddings_binary(buf, path.string());
    return load_embeddings_csv(buf, path.string());
}

void validate_embedding_districts(const std::vector<EmbeddingRecord>& records,
                                  const std::vector<DistrictPolygon>& districts) {
    std::set<std::string> ids;
    for (const auto& d : districts) ids.insert(d.district_id);
    for (const auto& r : records)
        if (!ids.count(r.district_id))
            throw data_error("embedding store references unknown district " + r.district_id);
}

Image load_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) throw data_error("cannot open image: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw data_error("png init failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw data_error("png decode failed for " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_RGB || depth != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw data_error("image " + path.string() + ": expected 8-bit RGB");
    }

    std::vector<png_byte> rowbuf(static_cast<std::size_t>(w) * 3);
    Image img(static_cast<int>(h), static_cast<int>(w));
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(static_cast<int>(y), static_cast<int>(x), c) =
                    static_cast<float>(rowbuf[x * 3 + static_cast<png_uint_32>(c)]) / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void save_png(const std::filesystem::path& path, const Image& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw data_error("cannot write image: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw data_error("png init failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw data_error("png encode failed for " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> rowbuf(static_cast<std::size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                rowbuf[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<png_byte>(std::lround(std::clamp(img.at(y, x, c), 0.0f, 1.0f) * 255.0f));
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

NormStats compute_norm_stats(const std::vector<const Image*>& corpus) {
    if (corpus.empty()) throw data_error("norm stats: empty corpus");
    std::array<double, 3> sum{0, 0, 0}, sumsq{0, 0, 0};
    double count = 0;
    for (const Image* img : corpus) {
        for (int y = 0; y < img->h; ++y)
            for (int x = 0; x < img->w; ++x)
                for (int c = 0; c < 3; ++c) {
                    const double v = img->at(y, x, c);
                    sum[static_cast<std::size_t>(c)] += v;
                    sumsq[static_cast<std::size_t>(c)] += v * v;
                }
        count += static_cast<double>(img->h) * img->w;
    }
    NormStats st;
    for (std::size_t c = 0; c < 3; ++c) {
        st.mean[c] = sum[c] / count;
        const double var = std::max(0.0, sumsq[c] / count - st.mean[c] * st.mean[c]);
        st.stddev[c] = std::max(std::sqrt(var), 1e-8);
    }
    return st;
}

Image normalize_image(const Image& raw01, const NormStats& stats) {
    Image out(raw01.h, raw01.w);
    for (int y = 0; y < raw01.h; ++y)
        for (int x = 0; x < raw01.w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = static_cast<float>(
                    (raw01.at(y, x, c) - stats.mean[static_cast<std::size_t>(c)]) /
                    stats.stddev[static_cast<std::size_t>(c)]);
    return out;
}

std::string norm_stats_csv(const NormStats& stats) {
    std::string out = "channel,mean,stddev\n";
    for (std::size_t c = 0; c < 3; ++c)
        out += std::to_string(c) + ',' + fmt_double(stats.mean[c]) + ',' +
               fmt_double(stats.stddev[c]) + '\n';
    return out;
}

NormStats parse_norm_stats_csv(const std::string& text) {
    auto lines = split(trim(text), '\n');
    if (lines.size() != 4 || trim(lines[0]) != "channel,mean,stddev")
        throw data_error("norm stats: bad file layout");
    NormStats st;
    for (std::size_t c = 0; c < 3; ++c) {
        auto cells = split(trim(lines[c + 1]), ',');
        if (cells.size() != 3 || cells[0] != std::to_string(c))
            throw data_error("norm stats: bad row " + std::to_string(c + 1));
        st.mean[c] = parse_double(cells[1], "norm stats");
        st.stddev[c] = parse_double(cells[2], "norm stats");
    }
    return st;
}

DemographicsTable load_demographics(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    if (lines.empty()) throw data_error("demographics file " + path.string() + ": empty");
    auto header = split(lines[0], ',');
    if (header.size() < 2 || header[0] != "district_id")
        throw data_error("demographics file " + path.string() +
                         ": header must start with district_id");
    DemographicsTable table;
    table.variables.assign(header.begin() + 1, header.end());
    std::set<std::string> seen;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        auto cells = split(lines[li], ',');
        const std::string ctx = path.string() + " row " + std::to_string(li);
        if (cells.size() != header.size())
            throw data_error(ctx + ": expected " + std::to_string(header.size()) + " fields");
        if (!seen.insert(cells[0]).second)
            throw data_error(ctx + ": duplicate district " + cells[0]);
        table.district_ids.push_back(cells[0]);
        std::vector<double> row;
        row.reserve(table.variables.size());
        for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(parse_double(cells[i], ctx));
        table.values.push_back(std::move(row));
    }
    return table;
}

std::string demographics_csv(const DemographicsTable& table) {
    std::string out = "district_id";
    for (const auto& v : table.variables) out += ',' + v;
    out += '\n';
    for (std::size_t r = 0; r < table.district_ids.size(); ++r) {
        out += table.district_ids[r];
        for (double v : table.values[r]) {
            out += ',';
            out += fmt_double(v);
        }
        out += '\n';
    }
    return out;
}

std::filesystem::path tile_image_path(const std::filesystem::path& tiles_dir,
                                      const std::string& district_id, const TileId& t) {
    return tiles_dir / district_id /
           (std::to_string(t.z) + "_" + std::to_string(t.x) + "_" + std::to_string(t.y) + ".png");
}

}  // namespace readcore
