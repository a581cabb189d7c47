#include "wfm/forecast.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wfm/tensor_io.hpp"

namespace wfm {

Field EnsembleForecast::member_field(int m, int t) const {
  Field f(channels, height, width);
  const double* src = member_frame(m, t);
  std::copy(src, src + frame_size(), f.data.begin());
  return f;
}

void EnsembleForecast::validate() const {
  if (members_m < 1) throw std::invalid_argument("EnsembleForecast: M must be >= 1");
  if (members.size() != static_cast<std::size_t>(members_m) * steps_t * frame_size())
    throw std::invalid_argument("EnsembleForecast: member buffer size mismatch");
  if (!truth.empty()) {
    if (static_cast<int>(truth.size()) != steps_t)
      throw std::invalid_argument("EnsembleForecast: truth length mismatch");
    for (const Field& f : truth)
      if (f.channels != channels || f.height != height || f.width != width)
        throw std::invalid_argument("EnsembleForecast: truth shape mismatch");
  }
}

void save_forecast(const EnsembleForecast& f, const std::string& dir) {
  f.validate();
  const std::uint64_t mshape[5] = {
      static_cast<std::uint64_t>(f.members_m), static_cast<std::uint64_t>(f.steps_t),
      static_cast<std::uint64_t>(f.channels), static_cast<std::uint64_t>(f.height),
      static_cast<std::uint64_t>(f.width)};
  write_tensor(dir + "/members.wfmt", mshape, std::span<const double>(f.members));
  if (!f.truth.empty()) {
    std::vector<double> t;
    t.reserve(f.truth.size() * f.frame_size());
    for (const Field& fr : f.truth) t.insert(t.end(), fr.data.begin(), fr.data.end());
    const std::uint64_t tshape[4] = {static_cast<std::uint64_t>(f.steps_t),
                                     static_cast<std::uint64_t>(f.channels),
                                     static_cast<std::uint64_t>(f.height),
                                     static_cast<std::uint64_t>(f.width)};
    write_tensor(dir + "/truth.wfmt", tshape, std::span<const double>(t));
  }
  std::ofstream man(dir + "/forecast.txt");
  if (!man) throw std::runtime_error("save_forecast: cannot write manifest in " + dir);
  man << "seed " << f.seed << "\n";
  man << "sampler_steps " << f.sampler_steps << "\n";
  man << "ensemble " << f.members_m << "\n";
  man << "bank " << f.bank_name << "\n";
  man << "levels " << f.levels << "\n";
  man << "has_truth " << (f.truth.empty() ? 0 : 1) << "\n";
  man << "failure_steps";
  for (std::int64_t s : f.failure_steps) man << " " << s;
  man << "\n";
}

EnsembleForecast load_forecast(const std::string& dir) {
  std::ifstream man(dir + "/forecast.txt");
  if (!man) throw std::runtime_error("load_forecast: missing manifest in " + dir);

  EnsembleForecast f;
  bool has_truth = false;
  std::string line;
  while (std::getline(man, line)) {
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "seed") is >> f.seed;
    else if (key == "sampler_steps") is >> f.sampler_steps;
    else if (key == "bank") is >> f.bank_name;
    else if (key == "levels") is >> f.levels;
    else if (key == "has_truth") { int v = 0; is >> v; has_truth = v != 0; }
    else if (key == "failure_steps") {
      std::int64_t v;
      while (is >> v) f.failure_steps.push_back(v);
    }
  }

  TensorFile m = read_tensor(dir + "/members.wfmt");
  if (m.shape.size() != 5) throw std::runtime_error("load_forecast: members must be rank 5");
  f.members_m = static_cast<int>(m.shape[0]);
  f.steps_t = static_cast<int>(m.shape[1]);
  f.channels = static_cast<int>(m.shape[2]);
  f.height = static_cast<int>(m.shape[3]);
  f.width = static_cast<int>(m.shape[4]);
  f.members = m.as_f64();

  if (has_truth) {
    TensorFile t = read_tensor(dir + "/truth.wfmt");
    if (t.shape.size() != 4) throw std::runtime_error("load_forecast: truth must be rank 4");
    const std::vector<double> data = t.as_f64();
    const std::size_t frame = f.frame_size();
    f.truth.reserve(f.steps_t);
    for (int i = 0; i < f.steps_t; ++i) {
      Field fr(f.channels, f.height, f.width);
      std::copy(data.begin() + i * frame, data.begin() + (i + 1) * frame, fr.data.begin());
      f.truth.push_back(std::move(fr));
    }
  }
  if (f.failure_steps.empty()) f.failure_steps.assign(f.members_m, -1);
  f.validate();
  return f;
}

}  // namespace wfm
