#include "octoforce/datapipe.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "octoforce/errors.hpp"
#include "octoforce/serialize.hpp"

namespace octoforce {

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

namespace {

constexpr std::size_t kMagicSize = 16;
constexpr const char* kManifestName = "manifest.json";
constexpr const char* kBlobName = "volumes.bin";

std::array<char, kMagicSize> magic_of(const char* tag) {
  std::array<char, kMagicSize> m{};
  std::memcpy(m.data(), tag, std::min(kMagicSize, std::strlen(tag)));
  return m;
}

void write_magic(std::ostream& os, const char* tag) {
  const auto m = magic_of(tag);
  os.write(m.data(), kMagicSize);
}

void check_magic(std::istream& is, const char* tag, const std::filesystem::path& file) {
  std::array<char, kMagicSize> got{};
  is.read(got.data(), kMagicSize);
  if (!is || got != magic_of(tag)) throw FormatError(file.string() + ": bad magic, expected " + tag);
}

std::ofstream open_out(const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open " + file.string());
  return is;
}

void write_floats(std::ostream& os, const std::vector<float>& data) {
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
}

Json volume_record(const Volume& v, std::uint64_t offset) {
  return Json{{"offset", offset}, {"extents", v.extents}, {"spacing_mm", v.spacing_mm}};
}

std::shared_ptr<const Volume> load_volume_record(const Json& record, const std::string& path, std::istream& blob,
                                                 std::uint64_t blob_size, const std::filesystem::path& blob_file) {
  std::uint64_t offset = 0;
  Volume v;
  detail::ObjectReader r(record, path);
  r.field("offset", offset).field("extents", v.extents).field("spacing_mm", v.spacing_mm);
  r.done();
  for (auto e : v.extents) {
    if (e <= 0) throw FormatError(path + ": non-positive extent");
  }
  const std::uint64_t bytes = static_cast<std::uint64_t>(v.numel()) * sizeof(float);
  if (offset < kMagicSize || offset > blob_size || bytes > blob_size - offset) {
    throw FormatError(path + ": volume lies outside " + blob_file.string());
  }
  v.data.resize(static_cast<std::size_t>(v.numel()));
  blob.seekg(static_cast<std::streamoff>(offset));
  blob.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(bytes));
  if (!blob) throw FormatError(path + ": short read from " + blob_file.string());
  return std::make_shared<const Volume>(std::move(v));
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  auto blob = open_out(dir / kBlobName);
  write_magic(blob, kDatasetFormat);
  std::uint64_t offset = kMagicSize;
  std::map<const Volume*, Json> stored;
  auto store = [&](const std::shared_ptr<const Volume>& v) -> Json {
    if (!v) throw FormatError("dataset pair without a volume");
    if (auto it = stored.find(v.get()); it != stored.end()) return it->second;
    Json rec = volume_record(*v, offset);
    write_floats(blob, v->data);
    offset += v->data.size() * sizeof(float);
    stored.emplace(v.get(), rec);
    return rec;
  };

  Json pairs = Json::array();
  for (const auto& p : dataset.pairs) {
    Json rec{{"id", p.id},     {"roi_index", p.roi_index}, {"roi", p.roi},
             {"pose", p.pose}, {"label", p.label},         {"stiffness", p.stiffness}};
    rec["reference"] = store(p.reference);
    rec["deformed"] = store(p.deformed);
    pairs.push_back(std::move(rec));
  }
  blob.close();
  if (!blob) throw IoError("failed writing " + (dir / kBlobName).string());

  Json manifest{{"format", kDatasetFormat},
                {"spec", dataset.spec},
                {"plan", dataset.plan},
                {"seed", dataset.plan.seed},
                {"blob", kBlobName},
                {"pairs", std::move(pairs)}};
  auto os = open_out(dir / kManifestName);
  os << manifest.dump(1) << '\n';
  if (!os) throw IoError("failed writing " + (dir / kManifestName).string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_file = dir / kManifestName;
  auto is = open_in(manifest_file);
  Json manifest;
  try {
    manifest = Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_file.string() + ": " + e.what());
  }

  Dataset ds;
  try {
    std::string format;
    std::string blob_name;
    std::uint64_t seed = 0;
    detail::ObjectReader r(manifest, "");
    r.field("format", format);
    if (format != kDatasetFormat) throw FormatError(manifest_file.string() + ": unsupported format '" + format + "'");
    r.field("spec", ds.spec).field("plan", ds.plan).field("seed", seed).field("blob", blob_name);
    const Json* pairs = r.raw("pairs");
    r.done();
    if (seed != ds.plan.seed) throw FormatError(manifest_file.string() + ": seed disagrees with plan.seed");
    if (!pairs || !pairs->is_array()) throw FormatError(manifest_file.string() + ": missing pairs array");

    const auto blob_file = dir / blob_name;
    auto blob = open_in(blob_file);
    check_magic(blob, kDatasetFormat, blob_file);
    const auto blob_size = static_cast<std::uint64_t>(std::filesystem::file_size(blob_file));

    std::map<std::uint64_t, std::shared_ptr<const Volume>> loaded;
    auto load = [&](const Json* rec, const std::string& path) {
      if (!rec || !rec->is_object() || !rec->contains("offset")) throw FormatError(path + ": missing volume record");
      std::uint64_t offset = 0;
      detail::read_scalar(rec->at("offset"), offset, path + ".offset");
      if (auto it = loaded.find(offset); it != loaded.end()) return it->second;
      auto v = load_volume_record(*rec, path, blob, blob_size, blob_file);
      loaded.emplace(offset, v);
      return v;
    };

    ds.pairs.reserve(pairs->size());
    for (std::size_t i = 0; i < pairs->size(); ++i) {
      const std::string path = "pairs[" + std::to_string(i) + "]";
      SamplePair p;
      detail::ObjectReader pr((*pairs)[i], path);
      pr.field("id", p.id)
          .field("roi_index", p.roi_index)
          .field("roi", p.roi)
          .field("pose", p.pose)
          .field("label", p.label)
          .field("stiffness", p.stiffness);
      p.reference = load(pr.raw("reference"), path + ".reference");
      p.deformed = load(pr.raw("deformed"), path + ".deformed");
      pr.done();
      ds.pairs.push_back(std::move(p));
    }
  } catch (const ConfigError& e) {
    throw FormatError(manifest_file.string() + ": " + e.what());
  }
  return ds;
}

void write_volume(const std::filesystem::path& file, const Volume& volume) {
  if (static_cast<std::int64_t>(volume.data.size()) != volume.numel()) throw ShapeError("volume buffer size mismatch");
  auto os = open_out(file);
  write_magic(os, kVolumeFormat);
  os.write(reinterpret_cast<const char*>(volume.extents.data()), sizeof(volume.extents));
  os.write(reinterpret_cast<const char*>(volume.spacing_mm.data()), sizeof(volume.spacing_mm));
  write_floats(os, volume.data);
  if (!os) throw IoError("failed writing " + file.string());
}

Volume read_volume(const std::filesystem::path& file) {
  auto is = open_in(file);
  check_magic(is, kVolumeFormat, file);
  Volume v;
  is.read(reinterpret_cast<char*>(v.extents.data()), sizeof(v.extents));
  is.read(reinterpret_cast<char*>(v.spacing_mm.data()), sizeof(v.spacing_mm));
  if (!is) throw FormatError(file.string() + ": truncated header");
  for (auto e : v.extents) {
    if (e <= 0 || e > (1 << 16)) throw FormatError(file.string() + ": bad extents");
  }
  const auto expected = kMagicSize + sizeof(v.extents) + sizeof(v.spacing_mm) +
                        static_cast<std::uint64_t>(v.numel()) * sizeof(float);
  if (std::filesystem::file_size(file) != expected) throw FormatError(file.string() + ": size does not match extents");
  v.data.resize(static_cast<std::size_t>(v.numel()));
  is.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!is) throw FormatError(file.string() + ": short read");
  return v;
}

bool same_content(const Dataset& a, const Dataset& b) {
  if (!(a.spec == b.spec) || !(a.plan == b.plan) || a.pairs.size() != b.pairs.size()) return false;
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    const auto& p = a.pairs[i];
    const auto& q = b.pairs[i];
    if (p.id != q.id || p.roi_index != q.roi_index || !(p.roi == q.roi) || !(p.pose == q.pose) ||
        !(p.label == q.label) || p.stiffness != q.stiffness) {
      return false;
    }
    if (!p.reference || !q.reference || !p.deformed || !q.deformed) return false;
    if (!(*p.reference == *q.reference) || !(*p.deformed == *q.deformed)) return false;
  }
  return true;
}

std::vector<double> LabelScaler::apply(const std::vector<double>& labels) const {
  const std::size_t d = dim();
  if (d == 0 || labels.size() % d != 0) throw ShapeError("label buffer is not a multiple of the scaler dimension");
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = i % d;
    const double range = max[c] - min[c];
    out[i] = range > 0.0 ? (labels[i] - min[c]) / range : 0.5;
  }
  return out;
}

std::vector<double> LabelScaler::invert(const std::vector<double>& scaled) const {
  const std::size_t d = dim();
  if (d == 0 || scaled.size() % d != 0) throw ShapeError("label buffer is not a multiple of the scaler dimension");
  std::vector<double> out(scaled.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    const std::size_t c = i % d;
    const double range = max[c] - min[c];
    out[i] = range > 0.0 ? min[c] + scaled[i] * range : min[c];
  }
  return out;
}

LabelScaler fit_scaler(const std::vector<double>& labels, std::size_t dim) {
  if (dim == 0 || labels.empty() || labels.size() % dim != 0) throw ShapeError("fit_scaler needs a non-empty [n, dim] buffer");
  LabelScaler s;
  s.min.assign(dim, std::numeric_limits<double>::infinity());
  s.max.assign(dim, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = i % dim;
    s.min[c] = std::min(s.min[c], labels[i]);
    s.max[c] = std::max(s.max[c], labels[i]);
  }
  return s;
}

std::array<double, 3> to_array(const ForceVector& f) { return {f.fx, f.fy, f.fz}; }

void validate_split(const SplitSpec& spec) {
  for (double f : {spec.train, spec.val, spec.test}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

const std::vector<std::int64_t>& SplitIndices::by_name(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (valid: train, val, test)");
}

namespace {

// Fisher-Yates with an explicit unbiased bounded draw so the order does not
// depend on the standard library's distribution implementations.
template <typename Vec>
void seeded_shuffle(Vec& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(items[i - 1], items[static_cast<std::size_t>(r % bound)]);
  }
}

}  // namespace

SplitIndices split(std::size_t n, const SplitSpec& spec, const std::vector<std::int64_t>& groups) {
  validate_split(spec);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train), static_cast<std::size_t>(std::llround(spec.val * static_cast<double>(n))));
  SplitIndices out;

  if (!spec.group_aware || groups.empty()) {
    std::vector<std::int64_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::int64_t>(i);
    seeded_shuffle(order, spec.seed);
    const std::size_t a = std::min(n, n_train);
    out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(a));
    out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(a), order.begin() + static_cast<std::ptrdiff_t>(a + n_val));
    out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(a + n_val), order.end());
    return out;
  }

  if (groups.size() != n) throw ShapeError("split: group list length differs from item count");
  std::map<std::int64_t, std::vector<std::int64_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[groups[i]].push_back(static_cast<std::int64_t>(i));
  std::vector<std::int64_t> keys;
  for (const auto& [g, _] : members) keys.push_back(g);
  seeded_shuffle(keys, spec.seed);
  for (auto g : keys) {
    auto& items = members[g];
    auto& dest = out.train.size() < n_train ? out.train : (out.val.size() < n_val ? out.val : out.test);
    dest.insert(dest.end(), items.begin(), items.end());
  }
  return out;
}

}  // namespace octoforce
