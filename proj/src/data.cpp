#include "zsdg/data.hpp"

#include "zsdg/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace zsdg {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) throw FormatError("truncated IDX header in " + path.string());
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex32(std::uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex;
    os.width(8);
    os.fill('0');
    os << v;
    return os.str();
}

void fisher_yates(std::vector<std::size_t>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(items[i - 1], items[pick(rng)]);
    }
}

}  // namespace

// --- LabeledImageSet --------------------------------------------------------

LabeledImageSet::LabeledImageSet(std::size_t height, std::size_t width, std::size_t channels,
                                 std::vector<std::string> classes)
    : height_(height), width_(width), channels_(channels), classes_(std::move(classes)) {
    if (height == 0 || width == 0 || channels == 0) {
        throw DataError("image geometry must be positive");
    }
    std::set<std::string> unique(classes_.begin(), classes_.end());
    if (unique.size() != classes_.size()) throw DataError("duplicate class names in vocabulary");
}

std::size_t LabeledImageSet::class_index(const std::string& name) const {
    auto it = std::find(classes_.begin(), classes_.end(), name);
    if (it == classes_.end()) throw DataError("class '" + name + "' not in vocabulary");
    return static_cast<std::size_t>(it - classes_.begin());
}

std::span<const double> LabeledImageSet::pixels(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * image_size(), image_size());
}

Image LabeledImageSet::image(std::size_t i) const {
    const auto px = pixels(i);
    return Image{height_, width_, channels_, std::vector<double>(px.begin(), px.end())};
}

void LabeledImageSet::add(std::span<const double> pixels, std::size_t label) {
    if (pixels.size() != image_size()) {
        throw ShapeError("image has " + std::to_string(pixels.size()) + " values, expected " +
                         std::to_string(image_size()));
    }
    if (label >= classes_.size()) {
        throw DataError("label " + std::to_string(label) + " outside vocabulary of " +
                        std::to_string(classes_.size()));
    }
    data_.insert(data_.end(), pixels.begin(), pixels.end());
    labels_.push_back(label);
}

void LabeledImageSet::add(const Image& image, std::size_t label) {
    if (image.height != height_ || image.width != width_ || image.channels != channels_) {
        throw ShapeError("image geometry does not match set");
    }
    add(image.pixels, label);
}

LabeledImageSet LabeledImageSet::restrict_to(std::span<const std::string> classes) const {
    std::vector<std::size_t> remap(classes_.size(), classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) remap[class_index(classes[k])] = k;
    LabeledImageSet out(height_, width_, channels_,
                        std::vector<std::string>(classes.begin(), classes.end()));
    for (std::size_t i = 0; i < size(); ++i) {
        const std::size_t k = remap[labels_[i]];
        if (k < classes.size()) out.add(pixels(i), k);
    }
    return out;
}

LabeledImageSet LabeledImageSet::select(std::span<const std::size_t> indices) const {
    LabeledImageSet out(height_, width_, channels_, classes_);
    out.data_.reserve(indices.size() * image_size());
    for (std::size_t i : indices) {
        if (i >= size()) throw DataError("select: index out of range");
        out.add(pixels(i), labels_[i]);
    }
    return out;
}

void LabeledImageSet::validate() const {
    if (data_.size() != labels_.size() * image_size()) {
        throw DataError("pixel buffer does not match image count");
    }
    for (std::size_t l : labels_) {
        if (l >= classes_.size()) throw DataError("label outside vocabulary");
    }
    for (double v : data_) {
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("pixel value outside [0, 1]");
    }
}

// --- file formats -----------------------------------------------------------

std::vector<std::string> read_class_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open class map " + path.string());
    std::vector<std::string> names;
    std::vector<bool> filled;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab + 1 >= line.size()) {
            throw FormatError("class map line " + std::to_string(line_no) +
                              ": expected 'index<TAB>name'");
        }
        std::size_t index = 0;
        try {
            std::size_t used = 0;
            index = std::stoul(line.substr(0, tab), &used);
            if (used != tab) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw FormatError("class map line " + std::to_string(line_no) + ": bad index");
        }
        if (index >= names.size()) {
            names.resize(index + 1);
            filled.resize(index + 1, false);
        }
        if (filled[index]) {
            throw FormatError("class map line " + std::to_string(line_no) + ": duplicate index");
        }
        names[index] = line.substr(tab + 1);
        filled[index] = true;
    }
    for (std::size_t i = 0; i < filled.size(); ++i) {
        if (!filled[i]) throw FormatError("class map has no entry for index " + std::to_string(i));
    }
    if (names.empty()) throw FormatError("class map " + path.string() + " is empty");
    return names;
}

LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path,
                         const std::vector<std::string>& class_names) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);
    const auto img_magic = read_be32(img, 0, images_path);
    if (img_magic != 0x00000803) {
        throw FormatError("bad magic " + hex32(img_magic) + " in " + images_path.string() +
                          " (expected 0x00000803)");
    }
    const auto lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801) {
        throw FormatError("bad magic " + hex32(lab_magic) + " in " + labels_path.string() +
                          " (expected 0x00000801)");
    }
    const std::size_t n = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t n_labels = read_be32(lab, 4, labels_path);
    if (n != n_labels) {
        throw FormatError("count mismatch: " + std::to_string(n) + " images vs " +
                          std::to_string(n_labels) + " labels");
    }
    if (img.size() != 16 + n * rows * cols) {
        throw FormatError("IDX image payload size mismatch in " + images_path.string());
    }
    if (lab.size() != 8 + n) {
        throw FormatError("IDX label payload size mismatch in " + labels_path.string());
    }
    LabeledImageSet set(rows, cols, 1, class_names);
    std::vector<double> px(rows * cols);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < px.size(); ++k) {
            px[k] = static_cast<double>(img[16 + i * px.size() + k]) / 255.0;
        }
        const std::size_t label = lab[8 + i];
        if (label >= class_names.size()) {
            throw FormatError("label " + std::to_string(label) + " has no class name");
        }
        set.add(px, label);
    }
    return set;
}

LabeledImageSet load_cifar_binary(std::span<const std::filesystem::path> paths,
                                  const std::vector<std::string>& class_names,
                                  std::size_t label_bytes) {
    if (label_bytes != 1 && label_bytes != 2) throw ConfigError("CIFAR label bytes must be 1 or 2");
    constexpr std::size_t side = 32, plane = side * side, pixel_bytes = 3 * plane;
    const std::size_t record = label_bytes + pixel_bytes;
    LabeledImageSet set(side, side, 3, class_names);
    std::vector<double> px(pixel_bytes);
    for (const auto& path : paths) {
        const auto bytes = read_file(path);
        if (bytes.size() % record != 0) {
            throw FormatError("truncated record in " + path.string() + ": " +
                              std::to_string(bytes.size()) + " bytes is not a multiple of " +
                              std::to_string(record));
        }
        for (std::size_t off = 0; off < bytes.size(); off += record) {
            const std::size_t label = bytes[off + label_bytes - 1];
            if (label >= class_names.size()) {
                throw FormatError("label " + std::to_string(label) + " has no class name");
            }
            const unsigned char* p = bytes.data() + off + label_bytes;
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t k = 0; k < plane; ++k) {
                    px[k * 3 + c] = static_cast<double>(p[c * plane + k]) / 255.0;
                }
            }
            set.add(px, label);
        }
    }
    return set;
}

std::vector<std::string> fmnist_classes() {
    return {"t-shirt", "trouser", "pullover", "dress", "coat",
            "sandal",  "shirt",   "sneaker",  "bag",   "boot"};
}

std::vector<std::string> cifar10_classes() {
    return {"airplane", "car", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
}

std::vector<std::string> cifar100_classes() {
    return {"apple",        "aquarium_fish", "baby",       "bear",        "beaver",
            "bed",          "bee",           "beetle",     "bicycle",     "bottle",
            "bowl",         "boy",           "bridge",     "bus",         "butterfly",
            "camel",        "can",           "castle",     "caterpillar", "cattle",
            "chair",        "chimpanzee",    "clock",      "cloud",       "cockroach",
            "couch",        "crab",          "crocodile",  "cup",         "dinosaur",
            "dolphin",      "elephant",      "flatfish",   "forest",      "fox",
            "girl",         "hamster",       "house",      "kangaroo",    "keyboard",
            "lamp",         "lawn_mower",    "leopard",    "lion",        "lizard",
            "lobster",      "man",           "maple_tree", "motorcycle",  "mountain",
            "mouse",        "mushroom",      "oak_tree",   "orange",      "orchid",
            "otter",        "palm_tree",     "pear",       "pickup_truck", "pine_tree",
            "plain",        "plate",         "poppy",      "porcupine",   "possum",
            "rabbit",       "raccoon",       "ray",        "road",        "rocket",
            "rose",         "sea",           "seal",       "shark",       "shrew",
            "skunk",        "skyscraper",    "snail",      "snake",       "spider",
            "squirrel",     "streetcar",     "sunflower",  "sweet_pepper", "table",
            "tank",         "telephone",     "television", "tiger",       "tractor",
            "train",        "trout",         "tulip",      "turtle",      "wardrobe",
            "whale",        "willow_tree",   "wolf",       "woman",       "worm"};
}

std::vector<Setting> builtin_settings(const std::string& dataset) {
    if (dataset == "fmnist") {
        return {{"setting1", {"t-shirt", "sandal"}},
                {"setting2", {"sandal", "shirt"}},
                {"setting3", {"t-shirt", "boot"}},
                {"setting4", {"sandal", "boot"}}};
    }
    if (dataset == "cifar10") {
        return {{"setting1", {"cat", "truck"}},
                {"setting2", {"cat", "dog"}},
                {"setting3", {"deer", "ship"}},
                {"setting4", {"car", "deer"}},
                {"setting5", {"airplane", "car"}}};
    }
    if (dataset == "cifar100") {
        // "fish", "pine-tree" and "maple" resolve to the nearest CIFAR-100 fine labels.
        return {{"setting1",
                 {"whale", "aquarium_fish", "rose", "can", "orange", "lamp", "couch", "beetle",
                  "tiger", "skyscraper", "mountain", "kangaroo", "fox", "snail", "man", "snake",
                  "squirrel", "pine_tree", "motorcycle", "streetcar"}},
                {"setting2",
                 {"seal", "shark", "poppy", "bottle", "apple", "keyboard", "table",
                  "caterpillar", "lion", "bridge", "forest", "camel", "raccoon", "crab", "girl",
                  "dinosaur", "rabbit", "maple_tree", "bicycle", "tractor"}}};
    }
    if (dataset == "synthetic") return {{"setting1", {"cross", "badge"}}};
    throw ConfigError("no built-in settings for dataset '" + dataset + "'");
}

// --- domain construction ----------------------------------------------------

Image rotate_image(const Image& image, double degrees) {
    double turn = std::fmod(degrees, 360.0);
    if (turn < 0.0) turn += 360.0;
    double cos_t = 0.0, sin_t = 0.0;
    if (turn == 0.0) {
        cos_t = 1.0;
    } else if (turn == 90.0) {
        sin_t = 1.0;
    } else if (turn == 180.0) {
        cos_t = -1.0;
    } else if (turn == 270.0) {
        sin_t = -1.0;
    } else {
        const double rad = degrees * std::numbers::pi / 180.0;
        cos_t = std::cos(rad);
        sin_t = std::sin(rad);
    }

    const std::size_t h = image.height, w = image.width, ch = image.channels;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    Image out{h, w, ch, std::vector<double>(image.pixels.size(), 0.0)};
    auto src = [&](std::ptrdiff_t r, std::ptrdiff_t c, std::size_t k) {
        return image.pixels[(static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)) * ch + k];
    };
    for (std::size_t r = 0; r < h; ++r) {
        const double dy = static_cast<double>(r) - cy;
        for (std::size_t c = 0; c < w; ++c) {
            const double dx = static_cast<double>(c) - cx;
            // Inverse map: where in the source does this output pixel come from.
            const double sx = cx + dx * cos_t - dy * sin_t;
            const double sy = cy + dx * sin_t + dy * cos_t;
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            const double fx = sx - fx0, fy = sy - fy0;
            const auto x0 = static_cast<std::ptrdiff_t>(fx0);
            const auto y0 = static_cast<std::ptrdiff_t>(fy0);
            const std::ptrdiff_t xs[2] = {x0, x0 + 1};
            const std::ptrdiff_t ys[2] = {y0, y0 + 1};
            const double wx[2] = {1.0 - fx, fx};
            const double wy[2] = {1.0 - fy, fy};
            for (std::size_t k = 0; k < ch; ++k) {
                double acc = 0.0;
                for (int a = 0; a < 2; ++a) {
                    if (ys[a] < 0 || ys[a] >= static_cast<std::ptrdiff_t>(h) || wy[a] == 0.0) continue;
                    for (int b = 0; b < 2; ++b) {
                        if (xs[b] < 0 || xs[b] >= static_cast<std::ptrdiff_t>(w) || wx[b] == 0.0) continue;
                        acc += wy[a] * wx[b] * src(ys[a], xs[b], k);
                    }
                }
                out.pixels[(r * w + c) * ch + k] = acc;
            }
        }
    }
    return out;
}

Image pad_image(const Image& image, std::size_t height, std::size_t width) {
    if (height < image.height || width < image.width) {
        throw ShapeError("pad_image: target canvas smaller than image");
    }
    Image out{height, width, image.channels,
              std::vector<double>(height * width * image.channels, 0.0)};
    const std::size_t top = (height - image.height) / 2, left = (width - image.width) / 2;
    for (std::size_t r = 0; r < image.height; ++r) {
        const auto* from = image.pixels.data() + r * image.width * image.channels;
        auto* to = out.pixels.data() + ((r + top) * width + left) * image.channels;
        std::copy(from, from + image.width * image.channels, to);
    }
    return out;
}

std::size_t enlarged_side(std::size_t side) {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(side) * std::numbers::sqrt2));
}

std::vector<double> default_angles() { return {0.0, 15.0, 30.0, 45.0, 60.0, 75.0}; }

std::vector<Domain> build_rotated_domains(const LabeledImageSet& base,
                                          std::span<const double> angles, bool enlarge_canvas) {
    if (base.empty()) throw DataError("cannot build domains from an empty image set");
    if (angles.empty()) throw ConfigError("no rotation angles given");
    std::size_t h = base.height(), w = base.width();
    if (enlarge_canvas) {
        h = w = enlarged_side(std::max(h, w));
    }
    std::vector<Domain> domains;
    for (std::size_t d = 0; d < angles.size(); ++d) {
        Domain dom{"D" + std::to_string(d), angles[d],
                   LabeledImageSet(h, w, base.channels(), base.classes())};
        for (std::size_t i = 0; i < base.size(); ++i) {
            Image img = base.image(i);
            if (enlarge_canvas) img = pad_image(img, h, w);
            dom.images.add(rotate_image(img, angles[d]), base.labels()[i]);
        }
        domains.push_back(std::move(dom));
    }
    return domains;
}

LabeledImageSet cap_per_class(const LabeledImageSet& set, std::size_t cap, std::uint64_t seed) {
    if (cap == 0) return set;
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> by_class(set.classes().size());
    for (std::size_t i = 0; i < set.size(); ++i) by_class[set.labels()[i]].push_back(i);
    std::vector<std::size_t> keep;
    for (auto& idx : by_class) {
        fisher_yates(idx, rng);
        if (idx.size() > cap) idx.resize(cap);
        keep.insert(keep.end(), idx.begin(), idx.end());
    }
    std::sort(keep.begin(), keep.end());
    return set.select(keep);
}

void DomainSet::validate() const {
    if (domains.empty()) throw DataError("domain set is empty");
    if (target >= domains.size()) {
        throw DataError("target domain " + std::to_string(target) + " outside " +
                        std::to_string(domains.size()) + " domains");
    }
    const auto& vocab = domains.front().images.classes();
    for (const auto& d : domains) {
        if (d.images.classes() != vocab) throw DataError("domains do not share one vocabulary");
    }
    std::set<std::string> seen_set(seen.begin(), seen.end());
    for (const auto& u : unseen) {
        if (seen_set.count(u)) throw DataError("class '" + u + "' is both seen and unseen");
    }
}

DomainSet make_domain_set(std::vector<Domain> domains, const Setting& setting, std::size_t target) {
    if (domains.empty()) throw DataError("no domains");
    if (setting.unseen.empty()) throw DataError("setting '" + setting.name + "' has no unseen classes");
    const auto& vocab = domains.front().images.classes();
    std::set<std::string> unseen;
    for (const auto& u : setting.unseen) {
        if (std::find(vocab.begin(), vocab.end(), u) == vocab.end()) {
            throw DataError("unseen class '" + u + "' of setting '" + setting.name +
                            "' is not in the vocabulary");
        }
        if (!unseen.insert(u).second) throw DataError("duplicate unseen class '" + u + "'");
    }
    DomainSet set;
    set.target = target;
    for (const auto& c : vocab) {
        if (unseen.count(c)) {
            set.unseen.push_back(c);
        } else {
            set.seen.push_back(c);
        }
    }
    if (set.seen.empty()) {
        throw DataError("setting '" + setting.name + "' leaves zero seen classes");
    }
    set.domains = std::move(domains);
    set.validate();
    return set;
}

SettingSplit apply_setting(const std::vector<Domain>& domains, const Setting& setting,
                           std::size_t target) {
    // Validate on a geometry-only copy so the pixel data is copied once.
    std::vector<Domain> shells;
    for (const auto& d : domains) {
        shells.push_back({d.tag, d.angle,
                          LabeledImageSet(d.images.height(), d.images.width(),
                                          d.images.channels(), d.images.classes())});
    }
    const DomainSet universe = make_domain_set(std::move(shells), setting, target);

    SettingSplit split;
    split.seen = universe.seen;
    split.unseen = universe.unseen;
    split.target = target;
    for (std::size_t d = 0; d < domains.size(); ++d) {
        if (d == target) continue;
        split.train.push_back(
            {domains[d].tag, domains[d].angle, domains[d].images.restrict_to(split.seen)});
    }
    split.eval_dg = domains[target].images.restrict_to(split.seen);
    split.eval_zsdg = domains[target].images.restrict_to(split.unseen);
    return split;
}

bool domains_aligned(const std::vector<Domain>& domains) {
    for (const auto& d : domains) {
        if (d.images.labels() != domains.front().images.labels()) return false;
    }
    return true;
}

std::vector<Domain> align_domains_by_class(const std::vector<Domain>& domains, std::uint64_t seed) {
    if (domains.empty()) return {};
    std::mt19937_64 rng(seed);
    const auto& ref = domains.front().images;
    std::vector<Domain> out;
    out.push_back(domains.front());
    for (std::size_t d = 1; d < domains.size(); ++d) {
        const auto& imgs = domains[d].images;
        if (imgs.classes() != ref.classes()) throw DataError("domains do not share one vocabulary");
        std::vector<std::vector<std::size_t>> by_class(ref.classes().size());
        for (std::size_t i = 0; i < imgs.size(); ++i) by_class[imgs.labels()[i]].push_back(i);
        std::vector<std::size_t> picks;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            const auto& pool = by_class[ref.labels()[i]];
            if (pool.empty()) {
                throw DataError("domain " + domains[d].tag + " has no image of class '" +
                                ref.label_name(i) + "' to pair with");
            }
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            picks.push_back(pool[pick(rng)]);
        }
        out.push_back({domains[d].tag, domains[d].angle, imgs.select(picks)});
    }
    return out;
}

// --- batching ---------------------------------------------------------------

Batch gather_batch(const LabeledImageSet& set, std::span<const std::size_t> indices) {
    Batch b;
    b.inputs = Tensor({indices.size(), set.image_size()});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto px = set.pixels(indices[r]);
        std::copy(px.begin(), px.end(), b.inputs.row(r).begin());
        b.labels.push_back(set.labels()[indices[r]]);
    }
    b.indices.assign(indices.begin(), indices.end());
    return b;
}

BatchStream::BatchStream(std::size_t count, std::size_t batch_size, std::uint64_t seed)
    : count_(count), batch_size_(batch_size), rng_(seed) {
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
}

std::size_t BatchStream::batches_per_epoch() const {
    return (count_ + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> BatchStream::next_epoch() {
    std::vector<std::size_t> order(count_);
    for (std::size_t i = 0; i < count_; ++i) order[i] = i;
    fisher_yates(order, rng_);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < count_; start += batch_size_) {
        const std::size_t end = std::min(count_, start + batch_size_);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

std::vector<Batch> make_batches(const LabeledImageSet& set, BatchStream& stream) {
    std::vector<Batch> out;
    for (const auto& idx : stream.next_epoch()) out.push_back(gather_batch(set, idx));
    return out;
}

// --- synthetic benchmark ----------------------------------------------------

namespace {

constexpr std::size_t kPrimitives = 8;

struct Glyph {
    const char* name;
    std::vector<std::size_t> strokes;
};

const std::vector<Glyph>& glyph_catalog() {
    static const std::vector<Glyph> catalog = {
        {"bar", {0}},    {"pole", {1}},         {"disc", {2}},      {"notch", {3}},
        {"cross", {0, 1}}, {"badge", {2, 3}},   {"ring", {4}},      {"dots", {5}},
        {"slash", {6}},  {"frame", {7}},        {"halo", {4, 5}},   {"gate", {1, 7}},
    };
    return catalog;
}

// Stroke primitives on a canvas of the given side, sampled at pixel centres.
// Coordinates are expressed relative to a 16-pixel reference layout.
bool stroke_covers(std::size_t stroke, double x, double y) {
    switch (stroke) {
        case 0: return std::abs(y - 7.5) <= 1.0 && x >= 2.0 && x <= 13.0;
        case 1: return std::abs(x - 7.5) <= 1.0 && y >= 2.0 && y <= 13.0;
        case 2: return (x - 4.0) * (x - 4.0) + (y - 4.0) * (y - 4.0) <= 2.5 * 2.5;
        case 3:
            return (x >= 9.0 && x <= 13.0 && y >= 12.0 && y <= 13.0) ||
                   (x >= 12.0 && x <= 13.0 && y >= 9.0 && y <= 13.0);
        case 4: {
            const double r = std::hypot(x - 11.0, y - 4.0);
            return r >= 1.5 && r <= 2.8;
        }
        case 5:
            return (std::abs(x - 3.0) <= 0.5 || std::abs(x - 6.0) <= 0.5) &&
                   (std::abs(y - 10.0) <= 0.5 || std::abs(y - 13.0) <= 0.5);
        case 6: return std::abs(x - y) <= 0.8 && x >= 3.0 && x <= 12.0;
        case 7:
            return (x >= 3.0 && x <= 12.0 && y >= 3.0 && y <= 12.0) &&
                   !(x >= 4.0 && x <= 11.0 && y >= 4.0 && y <= 11.0);
        default: return false;
    }
}

}  // namespace

std::size_t synthetic_class_limit() { return glyph_catalog().size(); }

SyntheticUniverse make_synthetic_zsdg(const SyntheticSpec& spec) {
    if (spec.classes < 4) throw ConfigError("synthetic benchmark needs at least 4 classes");
    if (spec.classes > synthetic_class_limit()) {
        throw ConfigError("synthetic benchmark supports at most " +
                          std::to_string(synthetic_class_limit()) + " classes");
    }
    if (spec.per_class == 0) throw ConfigError("synthetic benchmark needs images per class");
    if (spec.side < 8) throw ConfigError("synthetic canvas side must be >= 8");

    const auto& catalog = glyph_catalog();
    std::vector<std::string> names;
    SyntheticUniverse universe;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        names.emplace_back(catalog[c].name);
        std::vector<double> e(kPrimitives, 0.0);
        for (std::size_t s : catalog[c].strokes) e[s] = 1.0;
        universe.embeddings.insert(names.back(), std::move(e));
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::uniform_int_distribution<int> jitter(-1, 1);
    const double unit = 16.0 / static_cast<double>(spec.side);
    LabeledImageSet base(spec.side, spec.side, 1, names);
    std::vector<double> px(spec.side * spec.side);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t k = 0; k < spec.per_class; ++k) {
            const double sx = jitter(rng), sy = jitter(rng);
            for (std::size_t r = 0; r < spec.side; ++r) {
                for (std::size_t col = 0; col < spec.side; ++col) {
                    const double x = (static_cast<double>(col) - sx) * unit;
                    const double y = (static_cast<double>(r) - sy) * unit;
                    double v = 0.0;
                    for (std::size_t s : catalog[c].strokes) {
                        if (stroke_covers(s, x, y)) v = 1.0;
                    }
                    px[r * spec.side + col] = std::clamp(v + noise(rng), 0.0, 1.0);
                }
            }
            base.add(px, c);
        }
    }
    universe.domains = build_rotated_domains(base, spec.angles);
    if (spec.classes >= 6) {
        universe.settings = builtin_settings("synthetic");
    } else {
        universe.settings = {{"setting1", {names[spec.classes - 2], names[spec.classes - 1]}}};
    }
    return universe;
}

}  // namespace zsdg
