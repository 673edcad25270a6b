#include "dccl/dataset.hpp"

#include "dccl/rng.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

namespace dccl {

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'C', 'C', 'L'};
constexpr std::uint32_t kVersion = 1;

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

template <typename T>
T parse_number(std::string_view token, const std::string& where) {
  auto text = trim(token);
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(where + ": cannot parse '" + text + "'");
  }
  return value;
}

std::uint32_t read_u32_le(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw FormatError("binary embeddings: truncated header");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  std::array<unsigned char, 4> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

void check_finite(const MatrixXd& data) {
  for (Index i = 0; i < data.rows(); ++i) {
    for (Index j = 0; j < data.cols(); ++j) {
      if (!std::isfinite(data(i, j))) {
        throw NonFiniteError("non-finite entry at row " + std::to_string(i) + ", column " +
                             std::to_string(j));
      }
    }
  }
}

EmbeddingSet load_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kMagic) throw FormatError("binary embeddings: bad magic in " + path.string());
  const auto version = read_u32_le(in);
  if (version != kVersion) {
    throw FormatError("binary embeddings: unsupported version " + std::to_string(version));
  }
  const auto rows = read_u32_le(in);
  const auto cols = read_u32_le(in);
  if (rows == 0 || cols == 0) throw FormatError("binary embeddings: empty matrix in header");

  const std::size_t n = std::size_t{rows} * cols;
  std::vector<unsigned char> bytes(n * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw ShapeError("binary embeddings: header declares " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " but payload is shorter");
  }
  in.peek();
  if (!in.eof()) throw ShapeError("binary embeddings: trailing bytes after payload");

  MatrixXd data(rows, cols);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint32_t u = std::uint32_t{bytes[4 * k]} | (std::uint32_t{bytes[4 * k + 1]} << 8) |
                            (std::uint32_t{bytes[4 * k + 2]} << 16) |
                            (std::uint32_t{bytes[4 * k + 3]} << 24);
    data(static_cast<Index>(k / cols), static_cast<Index>(k % cols)) = std::bit_cast<float>(u);
  }
  check_finite(data);
  return EmbeddingSet(std::move(data));
}

EmbeddingSet load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      row.push_back(parse_number<double>(rest.substr(0, comma),
                                         path.string() + ":" + std::to_string(line_no)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ShapeError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(rows.front().size()) + " columns, got " +
                       std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("csv embeddings: no rows in " + path.string());

  MatrixXd data(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      data(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
  }
  check_finite(data);
  return EmbeddingSet(std::move(data));
}

}  // namespace

EmbeddingSet::EmbeddingSet(MatrixXd data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) throw ShapeError("EmbeddingSet must be non-empty");
  check_finite(data_);
}

Index GcdDataset::num_labeled() const {
  return static_cast<Index>(std::count_if(labels.begin(), labels.end(),
                                          [](const Label& l) { return l.has_value(); }));
}

void GcdDataset::validate() const {
  const auto m = static_cast<std::size_t>(size());
  if (labels.size() != m || eval_labels.size() != m) {
    throw ShapeError("dataset labels are not aligned with embeddings");
  }
  std::set<ClassId> truth(eval_labels.begin(), eval_labels.end());
  for (ClassId c : labeled_class_set) {
    if (!truth.contains(c)) throw InvalidArgument("labeled class " + std::to_string(c) +
                                                  " does not occur in ground truth");
  }
  Index labeled = 0;
  for (const auto& l : labels) {
    if (!l) continue;
    ++labeled;
    if (!labeled_class_set.contains(*l)) {
      throw InvalidArgument("label " + std::to_string(*l) + " outside labeled class set");
    }
  }
  if (labeled == 0 || labeled == size()) {
    throw InvalidArgument("dataset needs at least one labeled and one unlabeled instance");
  }
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_superclasses < 1 || spec.classes_per_super < 1 || spec.instances_per_class < 1 ||
      spec.dim < 1) {
    throw InvalidArgument("generate_synthetic: all counts must be >= 1");
  }
  if (!(spec.superclass_spread > 0.0)) {
    throw InvalidArgument("generate_synthetic: superclass_spread must be > 0");
  }
  if (!(spec.intra_class_sigma >= 0.0)) {
    throw InvalidArgument("generate_synthetic: intra_class_sigma must be >= 0");
  }

  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = spec.superclass_spread / std::sqrt(static_cast<double>(spec.dim));

  const Index num_classes = spec.num_superclasses * spec.classes_per_super;
  SyntheticData out;
  out.superclass_means.resize(spec.num_superclasses, spec.dim);
  out.class_means.resize(num_classes, spec.dim);
  for (Index s = 0; s < spec.num_superclasses; ++s) {
    for (Index d = 0; d < spec.dim; ++d) out.superclass_means(s, d) = scale * normal(rng);
  }
  for (Index c = 0; c < num_classes; ++c) {
    const Index s = c / spec.classes_per_super;
    for (Index d = 0; d < spec.dim; ++d) {
      out.class_means(c, d) = out.superclass_means(s, d) + 0.5 * scale * normal(rng);
    }
  }

  MatrixXd data(num_classes * spec.instances_per_class, spec.dim);
  out.class_labels.reserve(static_cast<std::size_t>(data.rows()));
  for (Index c = 0; c < num_classes; ++c) {
    for (Index n = 0; n < spec.instances_per_class; ++n) {
      const Index row = c * spec.instances_per_class + n;
      for (Index d = 0; d < spec.dim; ++d) {
        data(row, d) = out.class_means(c, d) + spec.intra_class_sigma * normal(rng);
      }
      out.class_labels.push_back(static_cast<ClassId>(c));
    }
  }
  out.embeddings = EmbeddingSet(std::move(data));
  return out;
}

GcdDataset make_gcd_split(const EmbeddingSet& embeddings, const std::vector<ClassId>& class_labels,
                          const SplitSpec& spec) {
  if (class_labels.size() != static_cast<std::size_t>(embeddings.count())) {
    throw ShapeError("make_gcd_split: labels not aligned with embeddings");
  }
  auto in_unit = [](double f) { return f > 0.0 && f <= 1.0; };
  if (!in_unit(spec.labeled_class_fraction) || !in_unit(spec.labeled_instance_fraction)) {
    throw InvalidArgument("make_gcd_split: fractions must lie in (0, 1]");
  }

  std::map<ClassId, std::vector<Index>> members;
  for (std::size_t i = 0; i < class_labels.size(); ++i) {
    members[class_labels[i]].push_back(static_cast<Index>(i));
  }
  if (members.size() < 2) throw InvalidArgument("make_gcd_split: need at least 2 classes");

  std::vector<ClassId> classes;
  for (const auto& [c, _] : members) classes.push_back(c);
  Rng rng(derive_seed(spec.seed, "split.classes"));
  std::shuffle(classes.begin(), classes.end(), rng);

  const auto num_old = static_cast<std::size_t>(
      std::ceil(spec.labeled_class_fraction * static_cast<double>(classes.size())));

  GcdDataset ds;
  ds.embeddings = embeddings;
  ds.eval_labels = class_labels;
  ds.labels.assign(class_labels.size(), kUnlabeled);
  ds.true_num_classes = static_cast<Index>(classes.size());

  for (std::size_t k = 0; k < num_old; ++k) {
    const ClassId c = classes[k];
    ds.labeled_class_set.insert(c);
    auto idx = members[c];
    Rng pick(derive_seed(spec.seed, "split.instances", static_cast<std::uint64_t>(c)));
    std::shuffle(idx.begin(), idx.end(), pick);
    const auto take = static_cast<std::size_t>(
        std::ceil(spec.labeled_instance_fraction * static_cast<double>(idx.size())));
    for (std::size_t n = 0; n < take; ++n) ds.labels[static_cast<std::size_t>(idx[n])] = c;
  }

  const Index labeled = ds.num_labeled();
  if (labeled == 0) throw InvalidArgument("make_gcd_split: split leaves no labeled instances");
  if (labeled == ds.size()) {
    throw InvalidArgument("make_gcd_split: split leaves no unlabeled instances");
  }
  return ds;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
  return format == EmbeddingFormat::binary ? load_binary(path) : load_csv(path);
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set,
                     EmbeddingFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const MatrixXd& data = set.data();
  if (format == EmbeddingFormat::binary) {
    out.write(kMagic.data(), 4);
    write_u32_le(out, kVersion);
    write_u32_le(out, static_cast<std::uint32_t>(data.rows()));
    write_u32_le(out, static_cast<std::uint32_t>(data.cols()));
    for (Index i = 0; i < data.rows(); ++i) {
      for (Index j = 0; j < data.cols(); ++j) {
        write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(data(i, j))));
      }
    }
  } else {
    std::array<char, 64> buf{};
    for (Index i = 0; i < data.rows(); ++i) {
      for (Index j = 0; j < data.cols(); ++j) {
        if (j > 0) out.put(',');
        auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), data(i, j));
        out.write(buf.data(), ptr - buf.data());
      }
      out.put('\n');
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<Label> load_labels(const std::filesystem::path& path, Index num_rows) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Label> labels(static_cast<std::size_t>(num_rows), kUnlabeled);
  std::vector<bool> seen(static_cast<std::size_t>(num_rows), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(where + ": expected 'index,label'");
    const auto index = parse_number<long long>(std::string_view(line).substr(0, comma), where);
    const auto label = parse_number<long long>(std::string_view(line).substr(comma + 1), where);
    if (index < 0 || index >= num_rows) {
      throw ShapeError(where + ": index " + std::to_string(index) + " out of range");
    }
    if (seen[static_cast<std::size_t>(index)]) {
      throw FormatError(where + ": duplicate index " + std::to_string(index));
    }
    seen[static_cast<std::size_t>(index)] = true;
    if (label < kUnlabeledFileValue) throw FormatError(where + ": negative label");
    if (label != kUnlabeledFileValue) {
      labels[static_cast<std::size_t>(index)] = static_cast<ClassId>(label);
    }
  }
  return labels;
}

void save_labels(const std::filesystem::path& path, const std::vector<Label>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << i << ',' << (labels[i] ? *labels[i] : kUnlabeledFileValue) << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace dccl
