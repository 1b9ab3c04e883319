#include "repflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "repflow/errors.hpp"

namespace repflow::data {

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, int64_t row, const std::string& col) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    if (!std::isfinite(v))
      throw ParseError("non-finite value at row " + std::to_string(row) + ", column " + col);
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("cannot parse '" + s + "' at row " + std::to_string(row) + ", column " + col);
  }
}

void fill_outcomes(SyntheticDataset& ds, Rng& rng, int64_t i) {
  const double* xi = ds.x.data() + i * ds.d;
  const double f = baseline_f(xi, ds.d);
  const double tau = effect_tau(xi, ds.d);
  const double e0 = rng.normal();
  const double e1 = rng.normal();
  ds.tau[static_cast<size_t>(i)] = tau;
  ds.y0[static_cast<size_t>(i)] = f + e0;
  ds.y1[static_cast<size_t>(i)] = f + tau + e1;
  ds.y[static_cast<size_t>(i)] =
      ds.a[static_cast<size_t>(i)] ? ds.y1[static_cast<size_t>(i)] : ds.y0[static_cast<size_t>(i)];
}

}  // namespace

void Standardizer::apply_x_row(const double* in, double* out) const {
  for (size_t j = 0; j < x_mean.size(); ++j) out[j] = (in[j] - x_mean[j]) / x_std[j];
}

double baseline_f(const double* x, int64_t d) {
  (void)d;
  return 0.5 * x[0] * x[0] + 0.5 * std::exp((x[1] + x[2]) / 4.0) + std::sin(x[3] + x[4]);
}

double effect_tau(const double* x, int64_t d) {
  (void)d;
  return 1.0 + 0.5 * x[0] - 0.5 * x[1] * x[1] + std::sin(x[2]);
}

double propensity_logit(const double* x, int64_t d) {
  (void)d;
  return 0.5 + 0.5 * x[0] - x[1] * x[1] + std::sin(x[2]);
}

SyntheticDataset gen_setting_a(int64_t n, int64_t d, uint64_t seed) {
  if (d < 5) throw PreconditionError("gen_setting_a: d must be >= 5, got " + std::to_string(d));
  if (n < 1) throw PreconditionError("gen_setting_a: n must be >= 1");
  SyntheticDataset ds;
  ds.n = n;
  ds.d = d;
  ds.x.resize(static_cast<size_t>(n * d));
  ds.a.resize(static_cast<size_t>(n));
  ds.y.resize(static_cast<size_t>(n));
  ds.y0.resize(static_cast<size_t>(n));
  ds.y1.resize(static_cast<size_t>(n));
  ds.tau.resize(static_cast<size_t>(n));
  ds.propensity.resize(static_cast<size_t>(n));
  Rng rng = Rng(seed).derive("setting_a");
  for (int64_t i = 0; i < n; ++i) {
    double* xi = ds.x.data() + i * d;
    for (int64_t j = 0; j < d; ++j) xi[j] = rng.normal();
    const double p = sigmoid(propensity_logit(xi, d));
    ds.propensity[static_cast<size_t>(i)] = p;
    ds.a[static_cast<size_t>(i)] = rng.bernoulli(p) ? 1 : 0;
    fill_outcomes(ds, rng, i);
  }
  return ds;
}

SyntheticDataset gen_setting_b(int64_t n, int64_t d, double s, uint64_t seed) {
  if (d < 5) throw PreconditionError("gen_setting_b: d must be >= 5, got " + std::to_string(d));
  if (n < 1) throw PreconditionError("gen_setting_b: n must be >= 1");
  SyntheticDataset ds;
  ds.n = n;
  ds.d = d;
  ds.x.resize(static_cast<size_t>(n * d));
  ds.a.resize(static_cast<size_t>(n));
  ds.y.resize(static_cast<size_t>(n));
  ds.y0.resize(static_cast<size_t>(n));
  ds.y1.resize(static_cast<size_t>(n));
  ds.tau.resize(static_cast<size_t>(n));
  Rng rng = Rng(seed).derive("setting_b");
  for (int64_t i = 0; i < n; ++i) {
    const int a = rng.bernoulli(0.5) ? 1 : 0;
    ds.a[static_cast<size_t>(i)] = a;
    double* xi = ds.x.data() + i * d;
    const double shift = a ? s : 0.0;
    for (int64_t j = 0; j < d; ++j) xi[j] = rng.normal() + shift;
    fill_outcomes(ds, rng, i);
  }
  return ds;
}

IhdpDataset load_ihdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_ihdp: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("load_ihdp: empty file " + path);

  std::vector<std::string> expected = {"treatment", "y_factual", "y_cfactual", "mu0", "mu1"};
  for (int64_t j = 1; j <= IhdpDataset::kCovariates; ++j) expected.push_back("x" + std::to_string(j));
  const auto header = split_line(line);
  if (header != expected)
    throw ParseError("load_ihdp: bad header in " + path +
                     " (want treatment,y_factual,y_cfactual,mu0,mu1,x1..x25)");

  IhdpDataset ds;
  int64_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto cells = split_line(line);
    if (static_cast<int64_t>(cells.size()) != 5 + IhdpDataset::kCovariates)
      throw ParseError("load_ihdp: row " + std::to_string(row) + " has " +
                       std::to_string(cells.size()) + " columns, want " +
                       std::to_string(5 + IhdpDataset::kCovariates));
    const double t = parse_double(cells[0], row, "treatment");
    if (t != 0.0 && t != 1.0)
      throw ParseError("load_ihdp: non-binary treatment at row " + std::to_string(row));
    ds.a.push_back(static_cast<int>(t));
    ds.y.push_back(parse_double(cells[1], row, "y_factual"));
    ds.y_cf.push_back(parse_double(cells[2], row, "y_cfactual"));
    ds.mu0.push_back(parse_double(cells[3], row, "mu0"));
    ds.mu1.push_back(parse_double(cells[4], row, "mu1"));
    for (int64_t j = 0; j < IhdpDataset::kCovariates; ++j)
      ds.x.push_back(parse_double(cells[static_cast<size_t>(5 + j)], row, "x" + std::to_string(j + 1)));
  }
  ds.n = row;
  if (ds.n == 0) throw ParseError("load_ihdp: no data rows in " + path);
  return ds;
}

SplitIndices split(int64_t n, double f_train, double f_val, double f_test, uint64_t seed) {
  if (n < 10) throw PreconditionError("split: need n >= 10, got " + std::to_string(n));
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw PreconditionError("split: fractions must sum to 1");
  if (f_train < 0 || f_val < 0 || f_test < 0) throw PreconditionError("split: negative fraction");
  const int64_t n_val = std::llround(f_val * static_cast<double>(n));
  const int64_t n_test = std::llround(f_test * static_cast<double>(n));
  const int64_t n_train = n - n_val - n_test;
  if (n_train < 1 || (f_val > 0 && n_val < 1) || (f_test > 0 && n_test < 1))
    throw PreconditionError("split: degenerate split sizes " + std::to_string(n_train) + "/" +
                            std::to_string(n_val) + "/" + std::to_string(n_test));

  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng(seed).derive("split");
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + n_train);
  out.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  out.test.assign(perm.begin() + n_train + n_val, perm.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Standardizer fit_standardizer(const std::vector<double>& x, int64_t d,
                              const std::vector<double>& y, const std::vector<int64_t>& rows) {
  if (rows.empty()) throw PreconditionError("fit_standardizer: empty training split");
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  Standardizer st;
  st.x_mean.assign(static_cast<size_t>(d), 0.0);
  st.x_std.assign(static_cast<size_t>(d), 0.0);
  for (int64_t i : rows)
    for (int64_t j = 0; j < d; ++j) st.x_mean[static_cast<size_t>(j)] += x[static_cast<size_t>(i * d + j)];
  for (auto& v : st.x_mean) v *= inv_n;
  for (int64_t i : rows)
    for (int64_t j = 0; j < d; ++j) {
      const double c = x[static_cast<size_t>(i * d + j)] - st.x_mean[static_cast<size_t>(j)];
      st.x_std[static_cast<size_t>(j)] += c * c;
    }
  for (int64_t j = 0; j < d; ++j) {
    double& s = st.x_std[static_cast<size_t>(j)];
    s = std::sqrt(s * inv_n);
    if (s <= 0.0) {
      s = 1.0;
      st.zero_variance_cols.push_back(j);
    }
  }
  double ym = 0.0, ys = 0.0;
  for (int64_t i : rows) ym += y[static_cast<size_t>(i)];
  ym *= inv_n;
  for (int64_t i : rows) {
    const double c = y[static_cast<size_t>(i)] - ym;
    ys += c * c;
  }
  ys = std::sqrt(ys * inv_n);
  st.y_mean = ym;
  st.y_std = ys > 0.0 ? ys : 1.0;
  if (ys <= 0.0) st.zero_variance_cols.push_back(-1);  // -1 marks the outcome column
  return st;
}

Batch standardized_batch(const std::vector<double>& x, int64_t d, const std::vector<int>& a,
                         const std::vector<double>& y, const std::vector<int64_t>& rows,
                         const Standardizer& st) {
  Batch b;
  b.n = static_cast<int64_t>(rows.size());
  b.d_x = d;
  b.d_y = 1;
  b.x.resize(static_cast<size_t>(b.n * d));
  b.y.resize(static_cast<size_t>(b.n));
  b.a.resize(static_cast<size_t>(b.n));
  for (int64_t k = 0; k < b.n; ++k) {
    const int64_t i = rows[static_cast<size_t>(k)];
    st.apply_x_row(x.data() + i * d, b.x.data() + k * d);
    b.y[static_cast<size_t>(k)] = st.apply_y(y[static_cast<size_t>(i)]);
    b.a[static_cast<size_t>(k)] = a[static_cast<size_t>(i)];
  }
  return b;
}

void write_synthetic_csv(const SyntheticDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_synthetic_csv: cannot open " + path);
  out << "a,y,y0,y1,tau";
  for (int64_t j = 1; j <= ds.d; ++j) out << ",x" << j;
  out << "\n";
  for (int64_t i = 0; i < ds.n; ++i) {
    out << ds.a[static_cast<size_t>(i)] << ',' << fmt_double(ds.y[static_cast<size_t>(i)]) << ','
        << fmt_double(ds.y0[static_cast<size_t>(i)]) << ',' << fmt_double(ds.y1[static_cast<size_t>(i)])
        << ',' << fmt_double(ds.tau[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < ds.d; ++j) out << ',' << fmt_double(ds.x[static_cast<size_t>(i * ds.d + j)]);
    out << "\n";
  }
  if (!out) throw IoError("write_synthetic_csv: write failed for " + path);
}

SyntheticDataset read_synthetic_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_synthetic_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("read_synthetic_csv: empty file " + path);
  const auto header = split_line(line);
  if (header.size() < 6 || header[0] != "a" || header[1] != "y" || header[2] != "y0" ||
      header[3] != "y1" || header[4] != "tau")
    throw ParseError("read_synthetic_csv: bad header in " + path);
  const int64_t d = static_cast<int64_t>(header.size()) - 5;
  for (int64_t j = 0; j < d; ++j)
    if (header[static_cast<size_t>(5 + j)] != "x" + std::to_string(j + 1))
      throw ParseError("read_synthetic_csv: bad covariate header '" +
                       header[static_cast<size_t>(5 + j)] + "' in " + path);

  SyntheticDataset ds;
  ds.d = d;
  int64_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto cells = split_line(line);
    if (static_cast<int64_t>(cells.size()) != 5 + d)
      throw ParseError("read_synthetic_csv: row " + std::to_string(row) + " has " +
                       std::to_string(cells.size()) + " columns, want " + std::to_string(5 + d));
    const double a = parse_double(cells[0], row, "a");
    if (a != 0.0 && a != 1.0)
      throw ParseError("read_synthetic_csv: non-binary treatment at row " + std::to_string(row));
    ds.a.push_back(static_cast<int>(a));
    ds.y.push_back(parse_double(cells[1], row, "y"));
    ds.y0.push_back(parse_double(cells[2], row, "y0"));
    ds.y1.push_back(parse_double(cells[3], row, "y1"));
    ds.tau.push_back(parse_double(cells[4], row, "tau"));
    for (int64_t j = 0; j < d; ++j)
      ds.x.push_back(parse_double(cells[static_cast<size_t>(5 + j)], row, "x" + std::to_string(j + 1)));
  }
  ds.n = row;
  if (ds.n == 0) throw ParseError("read_synthetic_csv: no data rows in " + path);
  return ds;
}

}  // namespace repflow::data
