#include "luda/workload.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "luda/errors.h"

namespace luda {

namespace {

uint64_t Mix(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string Trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

uint64_t ParseU64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InvalidArgument("workload: " + key + " expects an integer, got '" + v + "'");
  }
  return out;
}

double ParseDouble(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidArgument("workload: " + key + " expects a number, got '" + v + "'");
  }
}

double Zeta(uint64_t n, double theta) {
  double sum = 0;
  for (uint64_t i = 1; i <= n; ++i) sum += 1.0 / std::pow(static_cast<double>(i), theta);
  return sum;
}

}  // namespace

void WorkloadSpec::Validate() const {
  if (key_size < 1 || value_size < 1) throw InvalidArgument("workload: sizes must be >= 1");
  if (read_fraction < 0 || update_fraction < 0 ||
      std::abs(read_fraction + update_fraction - 1.0) > 1e-9) {
    throw InvalidArgument("workload: read_fraction + update_fraction must be 1");
  }
  if (zipf_theta <= 0 || zipf_theta >= 1) throw InvalidArgument("workload: zipf_theta must be in (0, 1)");
  if (key_size < 20) {
    uint64_t limit = 1;
    for (size_t i = 0; i < key_size; ++i) limit *= 10;
    if (record_count > limit) {
      throw InvalidArgument("workload: record_count does not fit in key_size digits");
    }
  }
  if (op_count > 0 && record_count == 0) {
    throw InvalidArgument("workload: run phase needs loaded records");
  }
}

std::string WorkloadSpec::ToString() const {
  std::ostringstream os;
  os.precision(17);
  os << "record_count=" << record_count << "\n"
     << "op_count=" << op_count << "\n"
     << "key_size=" << key_size << "\n"
     << "value_size=" << value_size << "\n"
     << "read_fraction=" << read_fraction << "\n"
     << "update_fraction=" << update_fraction << "\n"
     << "distribution=" << (distribution == KeyDistribution::kUniform ? "uniform" : "zipfian")
     << "\n"
     << "zipf_theta=" << zipf_theta << "\n"
     << "seed=" << seed << "\n";
  return os.str();
}

WorkloadSpec ParseWorkloadSpec(std::string_view text, WorkloadSpec spec) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::string t = Trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("workload: line " + std::to_string(lineno) + " has no '='");
    }
    std::string key = Trim(std::string_view(t).substr(0, eq));
    std::string v = Trim(std::string_view(t).substr(eq + 1));
    if (key == "record_count") {
      spec.record_count = ParseU64(key, v);
    } else if (key == "op_count") {
      spec.op_count = ParseU64(key, v);
    } else if (key == "key_size") {
      spec.key_size = ParseU64(key, v);
    } else if (key == "value_size") {
      spec.value_size = ParseU64(key, v);
    } else if (key == "read_fraction") {
      spec.read_fraction = ParseDouble(key, v);
    } else if (key == "update_fraction") {
      spec.update_fraction = ParseDouble(key, v);
    } else if (key == "distribution") {
      if (v == "uniform") {
        spec.distribution = KeyDistribution::kUniform;
      } else if (v == "zipfian") {
        spec.distribution = KeyDistribution::kZipfian;
      } else {
        throw InvalidArgument("workload: unknown distribution '" + v + "'");
      }
    } else if (key == "zipf_theta") {
      spec.zipf_theta = ParseDouble(key, v);
    } else if (key == "seed") {
      spec.seed = ParseU64(key, v);
    } else {
      throw InvalidArgument("workload: unknown key '" + key + "'");
    }
  }
  spec.Validate();
  return spec;
}

WorkloadSpec LoadWorkloadSpecFile(const std::string& path, WorkloadSpec base) {
  std::ifstream in(path);
  if (!in) throw IoError("open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseWorkloadSpec(ss.str(), base);
}

// ---------------------------------------------------------------------------

Permutation::Permutation(uint64_t n, uint64_t seed) : n_(n) {
  int bits = 2;
  while (bits < 64 && (uint64_t{1} << bits) < n) ++bits;
  if (bits % 2) ++bits;
  half_bits_ = bits / 2;
  half_mask_ = (uint64_t{1} << half_bits_) - 1;
  for (int r = 0; r < 4; ++r) keys_[r] = Mix(seed * 4 + r + 0x51ed2701);
}

uint64_t Permutation::Round(uint64_t x, int round) const {
  return Mix(x ^ keys_[round]) & half_mask_;
}

uint64_t Permutation::operator()(uint64_t i) const {
  if (n_ <= 1) return 0;
  uint64_t x = i;
  do {
    uint64_t l = x >> half_bits_;
    uint64_t r = x & half_mask_;
    for (int k = 0; k < 4; ++k) {
      uint64_t t = l ^ Round(r, k);
      l = r;
      r = t;
    }
    x = (l << half_bits_) | r;
  } while (x >= n_);
  return x;
}

ZipfianGenerator::ZipfianGenerator(uint64_t n, double theta) : n_(n), theta_(theta) {
  zetan_ = Zeta(n, theta);
  zeta2_ = Zeta(2, theta);
  alpha_ = 1.0 / (1.0 - theta);
  eta_ = (1 - std::pow(2.0 / static_cast<double>(n), 1 - theta)) / (1 - zeta2_ / zetan_);
}

uint64_t ZipfianGenerator::Sample(double u) const {
  double uz = u * zetan_;
  if (uz < 1.0) return 0;
  if (uz < 1.0 + std::pow(0.5, theta_)) return n_ > 1 ? 1 : 0;
  auto v = static_cast<uint64_t>(static_cast<double>(n_) * std::pow(eta_ * u - eta_ + 1, alpha_));
  return std::min(v, n_ - 1);
}

double ZipfianGenerator::Probability(uint64_t i) const {
  return 1.0 / std::pow(static_cast<double>(i + 1), theta_) / zetan_;
}

uint64_t SplitMix64::Next() {
  state_ += 0x9e3779b97f4a7c15ULL;
  return Mix(state_);
}

double SplitMix64::NextDouble() {
  return static_cast<double>(Next() >> 11) * (1.0 / 9007199254740992.0);
}

std::string FormatKey(uint64_t id, size_t key_size) {
  std::string digits = std::to_string(id);
  if (digits.size() >= key_size) return digits.substr(digits.size() - key_size);
  return std::string(key_size - digits.size(), '0') + digits;
}

void FillValue(uint64_t seed, uint64_t op_index, size_t size, std::string* out) {
  out->resize(size);
  SplitMix64 rng(Mix(seed) ^ Mix(op_index + 0x1234567));
  size_t i = 0;
  for (; i + 8 <= size; i += 8) {
    uint64_t w = rng.Next();
    std::memcpy(out->data() + i, &w, 8);
  }
  if (i < size) {
    uint64_t w = rng.Next();
    std::memcpy(out->data() + i, &w, size - i);
  }
}

// ---------------------------------------------------------------------------

LoadGenerator::LoadGenerator(const WorkloadSpec& spec, int partition, int partitions)
    : spec_(spec),
      perm_(spec.record_count, spec.seed),
      next_(static_cast<uint64_t>(partition)),
      stride_(static_cast<uint64_t>(partitions)) {
  if (partitions < 1 || partition < 0 || partition >= partitions) {
    throw InvalidArgument("bad partition");
  }
}

bool LoadGenerator::Next(Op* op) {
  if (next_ >= spec_.record_count) return false;
  op->kind = OpKind::kInsert;
  op->key = FormatKey(perm_(next_), spec_.key_size);
  FillValue(spec_.seed, next_, spec_.value_size, &op->value);
  next_ += stride_;
  return true;
}

RunGenerator::RunGenerator(const WorkloadSpec& spec, int partition, int partitions)
    : spec_(spec),
      perm_(spec.record_count, spec.seed),
      rng_(Mix(spec.seed + 0x7275 + static_cast<uint64_t>(partition) * 0x10001)),
      value_seed_(Mix(spec.seed ^ 0xabcdef) + static_cast<uint64_t>(partition)) {
  if (partitions < 1 || partition < 0 || partition >= partitions) {
    throw InvalidArgument("bad partition");
  }
  uint64_t share = spec.op_count / partitions;
  remaining_ = share + (static_cast<uint64_t>(partition) < spec.op_count % partitions ? 1 : 0);
  if (spec.distribution == KeyDistribution::kZipfian && spec.record_count > 0) {
    zipf_ = std::make_shared<ZipfianGenerator>(spec.record_count, spec.zipf_theta);
  }
}

bool RunGenerator::Next(Op* op) {
  if (remaining_ == 0) return false;
  --remaining_;
  bool read = rng_.NextDouble() < spec_.read_fraction;
  uint64_t rank = zipf_ ? zipf_->Sample(rng_.NextDouble())
                        : static_cast<uint64_t>(rng_.NextDouble() * static_cast<double>(spec_.record_count));
  op->key = FormatKey(perm_(rank), spec_.key_size);
  if (read) {
    op->kind = OpKind::kRead;
    op->value.clear();
  } else {
    op->kind = OpKind::kUpdate;
    FillValue(value_seed_, op_index_, spec_.value_size, &op->value);
  }
  ++op_index_;
  return true;
}

}  // namespace luda
