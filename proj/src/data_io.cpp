#include "gstrs/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace gstrs {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian layout");

std::string_view role_name(Role role) {
  switch (role) {
    case Role::Train: return "train";
    case Role::Query: return "query";
    case Role::Gallery: return "gallery";
  }
  return "train";
}

DatasetManifest::DatasetManifest(std::vector<ManifestRow> rows) : rows_(std::move(rows)) {
  std::set<std::int64_t> seen;
  std::set<std::string> names;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& r = rows_[i];
    if (!seen.insert(r.sample_id).second) {
      throw Error("duplicate sample_id " + std::to_string(r.sample_id) + " at row " +
                  std::to_string(i));
    }
    if (r.class_name.empty()) throw Error("empty class at row " + std::to_string(i));
    if (r.group && *r.group < 0) throw Error("negative group at row " + std::to_string(i));
    names.insert(r.class_name);
  }
  class_names_.assign(names.begin(), names.end());
  labels_.reserve(rows_.size());
  for (const auto& r : rows_) {
    const auto it = std::ranges::lower_bound(class_names_, r.class_name);
    labels_.push_back(static_cast<std::size_t>(it - class_names_.begin()));
  }
}

bool DatasetManifest::has_all_groups() const {
  return std::ranges::all_of(rows_, [](const ManifestRow& r) { return r.group.has_value(); });
}

std::optional<std::size_t> DatasetManifest::row_of(std::int64_t sample_id) const {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (rows_[i].sample_id == sample_id) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> DatasetManifest::rows_with_role(Role role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (rows_[i].role == role) out.push_back(i);
  }
  return out;
}

DatasetManifest DatasetManifest::with_roles(const std::vector<Role>& roles) const {
  if (roles.size() != rows_.size()) throw Error("role vector size mismatch");
  auto rows = rows_;
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].role = roles[i];
  return DatasetManifest(std::move(rows));
}

DatasetManifest DatasetManifest::select(const std::vector<std::size_t>& rows) const {
  std::vector<ManifestRow> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(rows_.at(r));
  return DatasetManifest(std::move(out));
}

// ---------------------------------------------------------------------------
// Feature files

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

constexpr std::size_t kFeatureHeaderBytes = 8 + 4 + 8 + 8;

}  // namespace

void save_features(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  write_raw(out, kFeatureVersion);
  write_raw(out, static_cast<std::uint64_t>(features.rows()));
  write_raw(out, static_cast<std::uint64_t>(features.dim()));
  std::vector<float> payload(features.matrix().size());
  std::ranges::transform(features.matrix().values(), payload.begin(),
                         [](double v) { return static_cast<float>(v); });
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw Error("write failed for " + path.string());
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < kFeatureHeaderBytes) {
    throw Error("truncated header at byte offset " + std::to_string(bytes.size()) +
                ": expected " + std::to_string(kFeatureHeaderBytes) + " bytes");
  }
  if (std::memcmp(bytes.data(), kFeatureMagic, sizeof(kFeatureMagic)) != 0) {
    throw Error("bad magic at byte offset 0");
  }
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  std::uint64_t dim = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&n, bytes.data() + 12, 8);
  std::memcpy(&dim, bytes.data() + 20, 8);
  if (version != kFeatureVersion) {
    throw Error("unsupported version " + std::to_string(version) + " at byte offset 8");
  }
  if (n == 0) throw Error("empty matrix");
  if (dim == 0) throw Error("zero feature dimension at byte offset 20");

  const std::uint64_t expected = kFeatureHeaderBytes + n * dim * sizeof(float);
  if (bytes.size() != expected) {
    throw Error("expected " + std::to_string(expected) + " bytes, found " +
                std::to_string(bytes.size()) + " (payload ends at byte offset " +
                std::to_string(bytes.size()) + ")");
  }
  std::vector<float> payload(n * dim);
  std::memcpy(payload.data(), bytes.data() + kFeatureHeaderBytes, payload.size() * sizeof(float));
  return FeatureMatrix(n, dim, std::vector<double>(payload.begin(), payload.end()));
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::optional<std::int64_t> parse_int(const std::string& s) {
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace

DatasetManifest parse_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("manifest line 1: missing header");
  if (trim(line) != "sample_id,class,group,role") {
    throw Error("manifest line 1: expected header 'sample_id,class,group,role'");
  }
  std::vector<ManifestRow> rows;
  std::set<std::int64_t> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "manifest line " + std::to_string(line_no) + ": ";
    auto fields = split_csv_line(line);
    if (fields.size() < 2 || fields.size() > 4) throw Error(where + "expected 4 fields");
    fields.resize(4);
    for (auto& f : fields) f = trim(f);

    ManifestRow row;
    const auto id = parse_int(fields[0]);
    if (!id) throw Error(where + "bad sample_id '" + fields[0] + "'");
    row.sample_id = *id;
    if (!seen.insert(row.sample_id).second) {
      throw Error(where + "duplicate sample_id " + fields[0]);
    }
    if (fields[1].empty()) throw Error(where + "empty class");
    row.class_name = fields[1];
    if (!fields[2].empty()) {
      const auto g = parse_int(fields[2]);
      if (!g || *g < 0) throw Error(where + "bad group '" + fields[2] + "'");
      row.group = *g;
    }
    if (fields[3].empty() || fields[3] == "train") {
      row.role = Role::Train;
    } else if (fields[3] == "query") {
      row.role = Role::Query;
    } else if (fields[3] == "gallery") {
      row.role = Role::Gallery;
    } else {
      throw Error(where + "bad role '" + fields[3] + "'");
    }
    rows.push_back(std::move(row));
  }
  return DatasetManifest(std::move(rows));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_manifest(in);
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "sample_id,class,group,role\n";
  for (const auto& r : manifest.rows()) {
    out << r.sample_id << ',' << r.class_name << ',';
    if (r.group) out << *r.group;
    out << ',' << role_name(r.role) << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic data and splits

namespace {

Vector random_direction(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  while (true) {
    Vector v(dim);
    for (auto& x : v) x = normal(rng);
    if (norm(v) > 1e-12) return l2_normalize(v);
  }
}

std::map<std::size_t, std::vector<std::size_t>> rows_by_class(const DatasetManifest& m) {
  std::map<std::size_t, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    out[m.labels()[i]].push_back(i);
  }
  return out;
}

}  // namespace

SyntheticData generate_synthetic(const SynthSpec& spec) {
  if (spec.n_classes == 0 || spec.groups_per_class == 0 || spec.samples_per_group == 0 ||
      spec.raw_dim == 0) {
    throw Error("synthetic spec counts must be at least 1");
  }
  if (spec.class_separation < 0 || spec.group_separation < 0 || spec.noise_sigma < 0) {
    throw Error("synthetic separations and noise must be non-negative");
  }
  Rng rng(derive_seed(spec.seed, 0x5e7d));
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t n = spec.n_classes * spec.groups_per_class * spec.samples_per_group;
  Matrix values(n, spec.raw_dim);
  std::vector<ManifestRow> rows;
  rows.reserve(n);
  const int width = static_cast<int>(std::to_string(spec.n_classes - 1).size());

  std::size_t i = 0;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    Vector class_mean = random_direction(spec.raw_dim, rng);
    for (auto& v : class_mean) v *= spec.class_separation;
    std::string name = std::to_string(c);
    name = "c" + std::string(static_cast<std::size_t>(width) - name.size(), '0') + name;

    for (std::size_t g = 0; g < spec.groups_per_class; ++g) {
      const Vector offset = random_direction(spec.raw_dim, rng);
      Vector group_mean(spec.raw_dim);
      for (std::size_t d = 0; d < spec.raw_dim; ++d) {
        group_mean[d] = class_mean[d] + spec.group_separation * offset[d];
      }
      for (std::size_t s = 0; s < spec.samples_per_group; ++s, ++i) {
        for (std::size_t d = 0; d < spec.raw_dim; ++d) {
          values(i, d) = group_mean[d] + spec.noise_sigma * noise(rng);
        }
        rows.push_back({static_cast<std::int64_t>(i), name, static_cast<std::int64_t>(g),
                        Role::Train});
      }
    }
  }
  return {FeatureMatrix(std::move(values)), DatasetManifest(std::move(rows))};
}

SplitResult split_train(const DatasetManifest& manifest, double train_fraction,
                        std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction < 1.0)) {
    throw Error("train fraction must be in [0, 1)");
  }
  SplitResult result;
  std::vector<Role> roles(manifest.size(), Role::Gallery);
  for (auto& [label, rows] : rows_by_class(manifest)) {
    Rng rng = make_rng(seed, 0x7a11, label);
    std::ranges::shuffle(rows, rng);
    const auto n_train =
        static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(rows.size())));
    for (std::size_t k = 0; k < n_train; ++k) roles[rows[k]] = Role::Train;
  }
  result.manifest = manifest.with_roles(roles);
  return result;
}

SplitResult split_roles(const DatasetManifest& manifest, double query_fraction,
                        std::uint64_t seed) {
  if (!(query_fraction > 0.0 && query_fraction < 1.0)) {
    throw Error("query fraction must be in (0, 1)");
  }
  SplitResult result;
  std::vector<Role> roles;
  roles.reserve(manifest.size());
  for (const auto& r : manifest.rows()) roles.push_back(r.role);

  for (auto& [label, all] : rows_by_class(manifest)) {
    // Held-out rows are split; a class without any is split whole.
    std::vector<std::size_t> rows;
    for (auto r : all) {
      if (manifest[r].role != Role::Train) rows.push_back(r);
    }
    if (rows.empty()) rows = std::move(all);
    if (rows.size() == 1) {
      roles[rows.front()] = Role::Gallery;
      result.warnings.push_back("class '" + manifest.class_names()[label] +
                                "' has a single evaluation sample; kept gallery-only");
      continue;
    }
    Rng rng = make_rng(seed, 0x9e7, label);
    std::ranges::shuffle(rows, rng);
    const auto floor_q =
        static_cast<std::size_t>(std::floor(query_fraction * static_cast<double>(rows.size())));
    const std::size_t n_query = std::max<std::size_t>(1, floor_q);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      roles[rows[k]] = k < n_query ? Role::Query : Role::Gallery;
    }
  }
  result.manifest = manifest.with_roles(roles);
  return result;
}

}  // namespace gstrs
