#include "dccl/encoder.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <sstream>

namespace dccl {

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), 8);
  if (!in) throw FormatError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int k = 7; k >= 0; --k) v = (v << 8) | b[static_cast<std::size_t>(k)];
  return v;
}

struct TensorShape {
  std::string name;
  Index rows = 0;
  Index cols = 0;
};

/// Rebuilds an EncoderParams skeleton from manifest shapes.
EncoderParams<double> skeleton(const std::vector<TensorShape>& shapes) {
  EncoderParams<double> p;
  for (const auto& s : shapes) {
    const auto dot = s.name.find('.');
    const auto dot2 = s.name.find('.', dot + 1);
    if (dot == std::string::npos || dot2 == std::string::npos) {
      throw FormatError("checkpoint: bad tensor name " + s.name);
    }
    const std::string group = s.name.substr(0, dot);
    const auto index = static_cast<std::size_t>(std::stoul(s.name.substr(dot + 1, dot2 - dot - 1)));
    const std::string kind = s.name.substr(dot2 + 1);
    auto& mlp = group == "extractor" ? p.extractor : group == "head" ? p.head
                                                                     : throw FormatError("checkpoint: unknown group " + group);
    if (mlp.layers.size() <= index) mlp.layers.resize(index + 1);
    if (kind == "weight") {
      mlp.layers[index].weight.resize(s.rows, s.cols);
    } else if (kind == "bias") {
      if (s.rows != 1) throw FormatError("checkpoint: bias must have one row");
      mlp.layers[index].bias.resize(s.cols);
    } else {
      throw FormatError("checkpoint: unknown tensor kind " + kind);
    }
  }
  for (const auto* mlp : {&p.extractor, &p.head}) {
    if (mlp->layers.empty()) throw FormatError("checkpoint: missing layers");
    for (std::size_t l = 0; l < mlp->layers.size(); ++l) {
      const auto& layer = mlp->layers[l];
      if (layer.weight.cols() != layer.bias.size() ||
          (l > 0 && mlp->layers[l - 1].weight.cols() != layer.weight.rows())) {
        throw ShapeError("checkpoint: layer shapes do not chain");
      }
    }
  }
  if (p.extractor.out() != p.head.in()) throw ShapeError("checkpoint: head does not fit extractor");
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<double>& params,
                     const std::map<std::string, std::string>& metadata) {
  std::ostringstream manifest;
  params.for_each_tensor([&](const std::string& name, const auto& t) {
    manifest << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
  });
  for (const auto& [key, value] : metadata) {
    if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw InvalidArgument("checkpoint metadata must be single-line without spaces in keys");
    }
    manifest << "meta " << key << ' ' << value << '\n';
  }
  const std::string text = manifest.str();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kMagic.data(), 4);
  put_u64(out, kVersion);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  params.for_each_tensor([&](const std::string&, const auto& t) {
    for (Index i = 0; i < t.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t.data()[i]));
  });
  if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kMagic) throw FormatError("checkpoint: bad magic");
  if (get_u64(in) != kVersion) throw FormatError("checkpoint: unsupported version");
  const auto len = get_u64(in);
  if (len > (1u << 24)) throw FormatError("checkpoint: manifest too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint: truncated manifest");

  Checkpoint ck;
  std::vector<TensorShape> shapes;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("meta ", 0) == 0) {
      const auto space = line.find(' ', 5);
      if (space == std::string::npos) throw FormatError("checkpoint: bad metadata line");
      ck.metadata[line.substr(5, space - 5)] = line.substr(space + 1);
      continue;
    }
    std::istringstream fields(line);
    TensorShape s;
    if (!(fields >> s.name >> s.rows >> s.cols)) throw FormatError("checkpoint: bad manifest line");
    shapes.push_back(s);
  }
  ck.params = skeleton(shapes);
  ck.params.for_each_tensor([&](const std::string&, auto& t) {
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = std::bit_cast<double>(get_u64(in));
  });
  in.peek();
  if (!in.eof()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

}  // namespace dccl
