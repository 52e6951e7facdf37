// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/tasks.hpp>

#include <cnnlab/parallel.hpp>
#include <cnnlab/rng.hpp>

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace cnnlab {

InputDist dist_from_string(const std::string& s) {
  if (s == "uniform_cube" || s == "uniform")
    return InputDist::uniform_cube;
  if (s == "std_gaussian" || s == "gaussian")
    return InputDist::std_gaussian;
  throw std::invalid_argument(fmt::format("unknown input distribution '{}'", s));
}

std::string to_string(InputDist d) {
  return d == InputDist::uniform_cube ? "uniform_cube" : "std_gaussian";
}

TargetSpec TargetSpec::separation(std::size_t input_dim) {
  TargetSpec t;
  t.kind = TargetKind::separation;
  t.input_dim = input_dim;
  t.validate();
  return t;
}

TargetSpec TargetSpec::truncated_separation(std::size_t input_dim, double A0) {
  TargetSpec t;
  t.kind = TargetKind::truncated_separation;
  t.input_dim = input_dim;
  t.A0 = A0;
  t.validate();
  return t;
}

TargetSpec TargetSpec::product(std::size_t input_dim, std::size_t i,
                               std::size_t j) {
  TargetSpec t;
  t.kind = TargetKind::product;
  t.input_dim = input_dim;
  t.I = {i, j};
  t.validate();
  return t;
}

TargetSpec TargetSpec::sparse(std::size_t input_dim, IndexSet I,
                              TwoLayerNet g) {
  TargetSpec t;
  t.kind = TargetKind::sparse;
  t.input_dim = input_dim;
  t.I = std::move(I);
  t.g = std::move(g);
  t.validate();
  return t;
}

void TargetSpec::validate() const {
  if (input_dim == 0)
    throw std::invalid_argument("TargetSpec: input_dim must be positive");
  switch (kind) {
  case TargetKind::separation:
  case TargetKind::truncated_separation:
    if (input_dim % 4 != 0)
      throw std::invalid_argument(fmt::format(
        "TargetSpec: separation needs input_dim divisible by 4, got {}",
        input_dim));
    if (kind == TargetKind::truncated_separation && !(A0 > 0.0))
      throw std::invalid_argument("TargetSpec: A0 must be positive");
    break;
  case TargetKind::product:
    if (I.size() != 2 || I[0] < 1 || I[1] < 1 || I[0] > input_dim ||
        I[1] > input_dim)
      throw std::invalid_argument("TargetSpec: product needs two indices in range");
    break;
  case TargetKind::sparse:
    check_index_set(I, input_dim);
    g.check();
    if (g.k != I.size())
      throw std::invalid_argument("TargetSpec: g arity differs from |I|");
    break;
  case TargetKind::custom:
    if (!custom)
      throw std::invalid_argument("TargetSpec: custom target without function");
    break;
  }
}

double separation_target(std::span<const double> x) {
  if (x.size() == 0 || x.size() % 4 != 0)
    throw std::invalid_argument(fmt::format(
      "separation target: input length {} not divisible by 4", x.size()));
  std::size_t d = x.size() / 4;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    s1 += x[2 * i] * x[2 * i] - x[2 * i + 1] * x[2 * i + 1];
    s2 += x[2 * d + 2 * i] * x[2 * d + 2 * i] -
          x[2 * d + 2 * i + 1] * x[2 * d + 2 * i + 1];
  }
  return s1 * s2 / static_cast<double>(d);
}

double eval_target(const TargetSpec& spec, std::span<const double> x) {
  if (x.size() != spec.input_dim)
    throw std::invalid_argument(fmt::format(
      "eval_target: input of length {} for input_dim {}", x.size(),
      spec.input_dim));
  switch (spec.kind) {
  case TargetKind::separation:
    return separation_target(x);
  case TargetKind::truncated_separation:
    return truncate(separation_target(x), spec.A0);
  case TargetKind::product:
    return x[spec.I[0] - 1] * x[spec.I[1] - 1];
  case TargetKind::sparse: {
    std::vector<double> xi(spec.I.size());
    for (std::size_t t = 0; t < spec.I.size(); ++t)
      xi[t] = x[spec.I[t] - 1];
    return spec.g(xi);
  }
  case TargetKind::custom:
    return spec.custom(x);
  }
  return 0.0;
}

Tensor sample_inputs(InputDist dist, std::size_t input_dim, std::size_t n,
                     std::uint64_t seed, std::string_view purpose,
                     std::size_t threads) {
  if (n == 0 || input_dim == 0)
    throw std::invalid_argument("sample_inputs: n and input_dim must be >= 1");
  Tensor X({n, input_dim});
  std::uint64_t pid = purpose_id(purpose);
  parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      Rng rng(seed, pid, r);
      double* row = X.values.data() + r * input_dim;
      for (std::size_t c = 0; c < input_dim; ++c)
        row[c] = dist == InputDist::uniform_cube ? rng.uniform() : rng.normal();
    }
  });
  return X;
}

Dataset make_dataset(const TargetSpec& spec, InputDist dist, std::size_t n,
                     double sigma, std::uint64_t seed, std::size_t threads) {
  spec.validate();
  if (!(sigma >= 0.0))
    throw std::invalid_argument("make_dataset: sigma must be >= 0");
  Dataset ds;
  ds.sigma = sigma;
  ds.seed = seed;
  ds.X = sample_inputs(dist, spec.input_dim, n, seed, "inputs", threads);
  ds.y = Tensor({n});
  std::uint64_t pid = purpose_id("noise");
  parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      std::span<const double> x(ds.X.values.data() + r * spec.input_dim,
                                spec.input_dim);
      double y = eval_target(spec, x);
      if (sigma > 0.0) {
        Rng rng(seed, pid, r);
        y += sigma * rng.normal();
      }
      ds.y[r] = y;
    }
  });
  return ds;
}

void write_csv(std::ostream& os, const Dataset& ds) {
  std::size_t D = ds.input_dim();
  for (std::size_t c = 0; c < D; ++c)
    os << 'x' << (c + 1) << ',';
  os << "y\n";
  for (std::size_t r = 0; r < ds.n(); ++r) {
    for (std::size_t c = 0; c < D; ++c)
      os << fmt::format("{},", ds.X[r * D + c]);
    os << fmt::format("{}\n", ds.y[r]);
  }
}

Dataset read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("read_csv: empty stream");
  std::size_t cols = 1;
  for (char ch : line)
    cols += ch == ',' ? 1 : 0;
  if (cols < 2)
    throw std::runtime_error("read_csv: need at least one x column and y");
  std::size_t D = cols - 1;
  std::vector<double> X, y;
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      double v = std::stod(cell);
      if (c < D)
        X.push_back(v);
      else
        y.push_back(v);
      ++c;
    }
    if (c != cols)
      throw std::runtime_error(
        fmt::format("read_csv: row with {} cells, expected {}", c, cols));
  }
  Dataset ds;
  std::size_t n = y.size();
  ds.X = Tensor({n, D}, std::move(X));
  ds.y = Tensor({n}, std::move(y));
  return ds;
}

namespace {

constexpr char kMagic[8] = {'C', 'N', 'N', 'L', 'A', 'B', 'D', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i)
    buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8))
    throw std::runtime_error("read_binary: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

} // namespace

void write_binary(std::ostream& os, const Dataset& ds) {
  os.write(kMagic, 8);
  put_u64(os, ds.n());
  put_u64(os, ds.input_dim());
  put_u64(os, std::bit_cast<std::uint64_t>(ds.sigma));
  put_u64(os, ds.seed);
  for (double v : ds.X.values)
    put_u64(os, std::bit_cast<std::uint64_t>(v));
  for (double v : ds.y.values)
    put_u64(os, std::bit_cast<std::uint64_t>(v));
}

Dataset read_binary(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("read_binary: bad magic");
  std::size_t n = get_u64(is), D = get_u64(is);
  if (n == 0 || D == 0 || n > (std::size_t{1} << 40) / D)
    throw std::runtime_error("read_binary: implausible dimensions");
  Dataset ds;
  ds.sigma = std::bit_cast<double>(get_u64(is));
  ds.seed = get_u64(is);
  ds.X = Tensor({n, D});
  ds.y = Tensor({n});
  for (double& v : ds.X.values)
    v = std::bit_cast<double>(get_u64(is));
  for (double& v : ds.y.values)
    v = std::bit_cast<double>(get_u64(is));
  return ds;
}

} // namespace cnnlab
