#include "zsdg/store.hpp"

#include "zsdg/checkpoint.hpp"
#include "zsdg/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace zsdg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "zsdg-prepared";
constexpr int kVersion = 1;

std::vector<NamedTensor> domain_tensors(const Domain& d) {
    const auto& s = d.images;
    std::vector<double> labels(s.labels().begin(), s.labels().end());
    return {{"pixels", Tensor({s.size(), s.height(), s.width(), s.channels()}, s.data())},
            {"labels", Tensor({s.size()}, std::move(labels))}};
}

const Tensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name,
                          const fs::path& path) {
    for (const auto& [n, t] : ts) {
        if (n == name) return t;
    }
    throw FormatError(path.string() + ": missing tensor '" + name + "'");
}

}  // namespace

fs::path manifest_path(const fs::path& dir) { return dir / "manifest.json"; }

void write_prepared(const fs::path& dir, const PreparedData& data, bool force) {
    if (data.domains.empty()) throw DataError("nothing to write: no domains");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    if (fs::exists(manifest_path(dir)) && !force) {
        throw IoError(manifest_path(dir).string() + " already exists (use --force to overwrite)");
    }
    const auto& first = data.domains.front().images;
    json manifest = {
        {"format", kFormat},
        {"version", kVersion},
        {"dataset", data.dataset},
        {"height", first.height()},
        {"width", first.width()},
        {"channels", first.channels()},
        {"classes", first.classes()},
        {"seed", data.seed},
        {"per_class_cap", data.per_class_cap},
        {"enlarge_canvas", data.enlarge_canvas},
    };
    json angles = json::array(), domains = json::array(), settings = json::array();
    for (const auto& d : data.domains) {
        if (d.images.classes() != first.classes()) throw DataError("domains do not share one vocabulary");
        const std::string file = d.tag + ".zsdg";
        write_tensor_file(dir / file, domain_tensors(d));
        angles.push_back(d.angle);
        domains.push_back({{"tag", d.tag}, {"angle", d.angle}, {"file", file}, {"count", d.images.size()}});
    }
    for (const auto& s : data.settings) settings.push_back({{"name", s.name}, {"unseen", s.unseen}});
    manifest["angles"] = angles;
    manifest["domains"] = domains;
    manifest["settings"] = settings;
    if (data.embeddings) {
        save_embedding_text(*data.embeddings, dir / "embeddings.txt");
        manifest["embeddings"] = "embeddings.txt";
        manifest["embedding_dim"] = data.embeddings->dim();
    } else {
        manifest["embeddings"] = nullptr;
    }
    write_file_atomic(manifest_path(dir), manifest.dump(2) + "\n");
}

PreparedData read_prepared(const fs::path& dir) {
    const fs::path mpath = manifest_path(dir);
    std::ifstream in(mpath);
    if (!in) throw IoError("cannot open " + mpath.string());
    json m;
    try {
        m = json::parse(in);
        if (m.at("format") != kFormat) throw FormatError(mpath.string() + ": not a prepared dataset");
        if (m.at("version") != kVersion) {
            throw FormatError(mpath.string() + ": unsupported version " + m.at("version").dump());
        }
        PreparedData out;
        out.dataset = m.at("dataset").get<std::string>();
        out.seed = m.at("seed").get<std::uint64_t>();
        out.per_class_cap = m.at("per_class_cap").get<std::size_t>();
        out.enlarge_canvas = m.at("enlarge_canvas").get<bool>();
        const auto h = m.at("height").get<std::size_t>();
        const auto w = m.at("width").get<std::size_t>();
        const auto c = m.at("channels").get<std::size_t>();
        const auto classes = m.at("classes").get<std::vector<std::string>>();
        for (const auto& d : m.at("domains")) {
            const fs::path file = dir / d.at("file").get<std::string>();
            const auto tensors = read_tensor_file(file);
            const Tensor& px = find_tensor(tensors, "pixels", file);
            const Tensor& lb = find_tensor(tensors, "labels", file);
            const std::size_t n = lb.size();
            if (px.shape() != Shape{n, h, w, c}) {
                throw FormatError(file.string() + ": pixel tensor " + shape_string(px.shape()) +
                                  " does not match manifest geometry");
            }
            if (n != d.at("count").get<std::size_t>()) {
                throw FormatError(file.string() + ": count disagrees with manifest");
            }
            LabeledImageSet set(h, w, c, classes);
            const std::size_t stride = h * w * c;
            for (std::size_t i = 0; i < n; ++i) {
                const double label = lb[i];
                if (label < 0 || label != std::floor(label) || label >= static_cast<double>(classes.size())) {
                    throw FormatError(file.string() + ": bad label at record " + std::to_string(i));
                }
                set.add(px.values().subspan(i * stride, stride), static_cast<std::size_t>(label));
            }
            out.domains.push_back({d.at("tag").get<std::string>(), d.at("angle").get<double>(),
                                   std::move(set)});
        }
        for (const auto& s : m.at("settings")) {
            out.settings.push_back({s.at("name").get<std::string>(),
                                    s.at("unseen").get<std::vector<std::string>>()});
        }
        if (!m.at("embeddings").is_null()) {
            out.embeddings = load_embedding_text(dir / m.at("embeddings").get<std::string>());
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError(mpath.string() + ": " + e.what());
    }
}

}  // namespace zsdg
