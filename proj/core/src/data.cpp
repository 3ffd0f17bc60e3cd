#include "dtfl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dtfl/errors.hpp"
#include "dtfl/random.hpp"

namespace dtfl::data {

namespace {

std::string trim(std::string_view s) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
      cell.push_back(c);
    } else if (c == ',' && !quoted) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

std::optional<double> parse_real(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::size_t> find_column(const std::vector<std::string>& header, const std::string& name) {
  const std::string want = lower(name);
  for (std::size_t i = 0; i < header.size(); ++i)
    if (lower(header[i]) == want) return i;
  return std::nullopt;
}

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    for (double& x : v) x = normal(rng);
    norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  } while (norm < 1e-12);
  for (double& x : v) x /= norm;
  return v;
}

// Near-equal split of `count` items into `parts` sizes; the first count%parts
// parts receive one extra item (or the last ones when `from_back`).
std::vector<std::size_t> near_equal_sizes(std::size_t count, std::size_t parts, bool from_back) {
  std::vector<std::size_t> sizes(parts, count / parts);
  const std::size_t extra = count % parts;
  for (std::size_t i = 0; i < extra; ++i) sizes[from_back ? parts - 1 - i : i] += 1;
  return sizes;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string subset_name) const {
  Dataset out;
  out.name = std::move(subset_name);
  out.dim = dim;
  out.features.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw InvalidInput("subset index out of range");
    out.features.insert(out.features.end(), row(i), row(i) + dim);
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::size_t Dataset::anomaly_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

void Dataset::validate() const {
  if (labels.empty()) throw InvalidInput("dataset '" + name + "' has no rows");
  if (dim == 0) throw InvalidInput("dataset '" + name + "' has no features");
  if (features.size() != labels.size() * dim)
    throw InvalidInput("dataset '" + name + "' feature buffer does not match n x d");
  for (std::uint8_t y : labels)
    if (y > 1) throw InvalidInput("dataset '" + name + "' has a non-binary label");
  for (double x : features)
    if (!std::isfinite(x)) throw InvalidInput("dataset '" + name + "' has a non-finite feature");
}

CsvSchema CsvSchema::preset(const std::string& name) {
  CsvSchema s;
  if (name == "i40") {
    s.label_column = "label";
    s.exclude_columns = {"timestamp", "time", "datetime", "date"};
    return s;
  }
  if (name == "batadal") {
    s.label_column = "ATT_FLAG";
    s.exclude_columns = {"DATETIME"};
    s.label_rule = LabelRule::PositiveIsAnomaly;
    return s;
  }
  throw InvalidInput("unknown CSV schema preset '" + name + "' (expected i40 or batadal)");
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open CSV file '" + path.string() + "'");

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::optional<std::size_t> width;

  auto next_nonblank = [&](std::string& out) {
    while (std::getline(in, out)) {
      ++line_no;
      if (trim(out).empty()) continue;
      return true;
    }
    return false;
  };

  if (schema.header) {
    if (!next_nonblank(line)) throw IngestError("CSV file '" + path.string() + "' is empty");
    header = split_row(line);
    width = header.size();
  }

  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  while (next_nonblank(line)) {
    auto cells = split_row(line);
    if (!width) width = cells.size();
    if (cells.size() != *width)
      throw IngestError(path.string() + ": line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " cells, expected " + std::to_string(*width));
    rows.push_back(std::move(cells));
    row_lines.push_back(line_no);
  }
  if (rows.empty()) throw IngestError("CSV file '" + path.string() + "' has no data rows");

  std::size_t label_idx = 0;
  if (schema.header) {
    auto found = find_column(header, schema.label_column);
    if (!found && schema.label_column == "label") found = find_column(header, "attack");
    if (!found) throw IngestError(path.string() + ": label column '" + schema.label_column + "' not found");
    label_idx = *found;
  } else {
    label_idx = schema.label_index.value_or(*width - 1);
    if (label_idx >= *width) throw IngestError(path.string() + ": label index out of range");
  }

  std::vector<std::size_t> feature_idx;
  if (!schema.feature_columns.empty()) {
    if (!schema.header) throw IngestError("named feature columns require a header row");
    for (const auto& name : schema.feature_columns) {
      auto found = find_column(header, name);
      if (!found) throw IngestError(path.string() + ": feature column '" + name + "' not found");
      feature_idx.push_back(*found);
    }
  } else {
    for (std::size_t c = 0; c < *width; ++c) {
      if (c == label_idx) continue;
      bool excluded = false;
      if (schema.header)
        for (const auto& ex : schema.exclude_columns)
          if (lower(header[c]) == lower(ex)) excluded = true;
      if (!excluded) feature_idx.push_back(c);
    }
  }
  if (feature_idx.empty()) throw IngestError(path.string() + ": no feature columns");

  Dataset ds;
  ds.name = path.stem().string();
  ds.dim = feature_idx.size();
  ds.features.reserve(rows.size() * ds.dim);
  ds.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    const std::string where = path.string() + ": data row " + std::to_string(r) + " (line " +
                              std::to_string(row_lines[r]) + ")";
    auto label = parse_real(cells[label_idx]);
    if (!label) throw IngestError(where + ": unparseable label '" + cells[label_idx] + "'");
    if (schema.label_rule == LabelRule::Binary) {
      if (*label != 0.0 && *label != 1.0)
        throw IngestError(where + ": label '" + cells[label_idx] + "' is not binary");
      ds.labels.push_back(*label == 1.0 ? 1 : 0);
    } else {
      ds.labels.push_back(*label > 0.0 ? 1 : 0);
    }
    for (std::size_t c : feature_idx) {
      auto v = parse_real(cells[c]);
      if (!v) throw IngestError(where + ": unparseable cell '" + cells[c] + "' in column " + std::to_string(c));
      ds.features.push_back(*v);
    }
  }
  return ds;
}

Standardizer Standardizer::fit(std::span<const Dataset* const> pooled) {
  if (pooled.empty()) throw InvalidInput("standardizer needs at least one dataset");
  const std::size_t d = pooled.front()->dim;
  std::size_t n = 0;
  for (const Dataset* ds : pooled) {
    if (ds->dim != d) throw InvalidInput("standardizer: feature counts differ");
    n += ds->size();
  }
  if (n == 0) throw InvalidInput("standardizer: no rows");
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (const Dataset* ds : pooled)
    for (std::size_t i = 0; i < ds->size(); ++i)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += ds->row(i)[j];
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (const Dataset* ds : pooled)
    for (std::size_t i = 0; i < ds->size(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = ds->row(i)[j] - s.mean[j];
        s.stddev[j] += c * c;
      }
  for (double& v : s.stddev) {
    v = std::sqrt(v / static_cast<double>(n));
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

Dataset Standardizer::apply(const Dataset& ds) const {
  if (ds.dim != mean.size()) throw InvalidInput("standardizer: feature count mismatch");
  Dataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out.dim; ++j) {
      double& x = out.features[i * out.dim + j];
      x = (x - mean[j]) / stddev[j];
    }
  return out;
}

JointlyStandardized standardize_jointly(const Dataset& a, const Dataset& b) {
  if (a.dim != b.dim) throw InvalidInput("standardize_jointly: feature counts differ");
  const Dataset* pooled[] = {&a, &b};
  Standardizer stats = Standardizer::fit(pooled);
  return {stats.apply(a), stats.apply(b), std::move(stats)};
}

std::vector<Dataset> partition(const Dataset& ds, const PartitionSpec& spec) {
  const std::size_t k = spec.num_clients;
  if (k == 0) throw InvalidInput("partition: need at least one client");
  if (ds.size() < k)
    throw InvalidInput("partition: " + std::to_string(ds.size()) + " rows cannot cover " + std::to_string(k) +
                       " clients");
  Rng rng = make_stream(spec.seed, {stream::kPartition});
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_in_place(order, rng);

  std::vector<std::vector<std::size_t>> shards(k);
  if (spec.scheme == PartitionScheme::Iid) {
    auto sizes = near_equal_sizes(order.size(), k, false);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < k; ++c) {
      shards[c].assign(order.begin() + pos, order.begin() + pos + sizes[c]);
      pos += sizes[c];
    }
  } else {
    if (!(spec.minority_fraction >= 0.0 && spec.minority_fraction <= 1.0))
      throw InvalidInput("partition: minority_fraction must lie in [0, 1]");
    const auto mixed_count =
        static_cast<std::size_t>(std::llround(spec.minority_fraction * static_cast<double>(order.size())));
    std::vector<std::size_t> mixed(order.begin(), order.begin() + mixed_count);
    std::vector<std::size_t> sorted(order.begin() + mixed_count, order.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });
    // Remainders go to opposite ends so that n >= K leaves no shard empty.
    auto sorted_sizes = near_equal_sizes(sorted.size(), k, false);
    auto mixed_sizes = near_equal_sizes(mixed.size(), k, true);
    std::size_t ps = 0, pm = 0;
    for (std::size_t c = 0; c < k; ++c) {
      shards[c].assign(sorted.begin() + ps, sorted.begin() + ps + sorted_sizes[c]);
      shards[c].insert(shards[c].end(), mixed.begin() + pm, mixed.begin() + pm + mixed_sizes[c]);
      ps += sorted_sizes[c];
      pm += mixed_sizes[c];
    }
  }

  std::vector<Dataset> out;
  out.reserve(k);
  for (std::size_t c = 0; c < k; ++c) out.push_back(ds.subset(shards[c], ds.name + "/client" + std::to_string(c)));
  return out;
}

void SyntheticScenario::validate() const {
  if (dim == 0) throw InvalidInput("scenario: dim must be positive");
  if (n_real == 0 || n_twin == 0) throw InvalidInput("scenario: sample counts must be positive");
  if (!(anomaly_rate > 0.0 && anomaly_rate < 1.0)) throw InvalidInput("scenario: anomaly_rate must lie in (0, 1)");
  if (!(shift >= 0.0) || !std::isfinite(shift)) throw InvalidInput("scenario: shift must be non-negative");
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) throw InvalidInput("scenario: noise_scale must be positive");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw InvalidInput("scenario: separation must be non-negative");
  if (!(anomaly_spread > 0.0) || !std::isfinite(anomaly_spread))
    throw InvalidInput("scenario: anomaly_spread must be positive");
}

ScenarioData generate_scenario(const SyntheticScenario& s) {
  s.validate();
  ScenarioData out;
  Rng dir_rng = make_stream(s.seed, {stream::kScenario, 0});
  out.anomaly_direction = random_unit(s.dim, dir_rng);
  out.shift_direction = random_unit(s.dim, dir_rng);

  auto draw = [&](std::size_t n, std::uint64_t key, double shift, std::string name) {
    Rng rng = make_stream(s.seed, {stream::kScenario, key});
    std::bernoulli_distribution is_anomaly(s.anomaly_rate);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset ds;
    ds.name = std::move(name);
    ds.dim = s.dim;
    ds.features.resize(n * s.dim);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool anomalous = is_anomaly(rng);
      ds.labels[i] = anomalous ? 1 : 0;
      const double sigma = s.noise_scale * (anomalous ? s.anomaly_spread : 1.0);
      double* x = ds.features.data() + i * s.dim;
      for (std::size_t j = 0; j < s.dim; ++j) {
        double mu = shift * out.shift_direction[j];
        if (anomalous) mu += s.separation * out.anomaly_direction[j];
        x[j] = mu + sigma * normal(rng);
      }
    }
    return ds;
  };
  out.real = draw(s.n_real, 1, 0.0, "real");
  out.twin = draw(s.n_twin, 2, s.shift, "twin");
  return out;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InvalidInput("train_test_split: test_fraction must lie in (0, 1)");
  const auto n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
  if (n_test == 0 || n_test >= ds.size())
    throw InvalidInput("train_test_split: split of " + std::to_string(ds.size()) + " rows leaves an empty side");
  Rng rng = make_stream(seed, {stream::kSplit});
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_in_place(order, rng);
  std::span<const std::size_t> all(order);
  Dataset test = ds.subset(all.first(n_test), ds.name + "/test");
  Dataset train = ds.subset(all.subspan(n_test), ds.name + "/train");
  return {std::move(train), std::move(test)};
}

}  // namespace dtfl::data
