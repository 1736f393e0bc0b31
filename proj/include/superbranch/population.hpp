#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "superbranch/space.hpp"

namespace superbranch {

struct Particle {
  std::uint64_t id = 0;
  std::uint32_t site = 0;
  double birth_time = 0.0;
  double age = 0.0;          // refreshed at snapshot time in age mode
  double root_mass = 1.0;    // mass of the time-0 ancestor
  double lineage = 1.0;      // product of offspring mass factors along the lineage
  double birth_mass = 1.0;
  double mass = 1.0;         // refreshed at snapshot time in mass mode
  std::uint32_t repro_count = 0;

  bool operator==(const Particle&) const = default;
};

// Weighted atomic measure X = weight * sum_i delta_{site_i}.
struct Population {
  std::vector<Particle> particles;
  double weight = 1.0;
  double time = 0.0;

  std::size_t count() const noexcept { return particles.size(); }
  double total_mass() const { return weight * static_cast<double>(particles.size()); }

  // X(f) = weight * sum_i f(site_i)
  double integrate(std::span<const double> f) const {
    double s = 0.0;
    for (const auto& p : particles) s += f[p.site];
    return weight * s;
  }

  std::vector<std::size_t> site_counts(std::size_t n_sites) const {
    std::vector<std::size_t> c(n_sites, 0);
    for (const auto& p : particles) ++c[p.site];
    return c;
  }

  bool operator==(const Population&) const = default;
};

}  // namespace superbranch
