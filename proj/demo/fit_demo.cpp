// Simulate a Matern field, fit it with the HODLR likelihood and with the
// exact likelihood, and print the estimates with 95% intervals.
//
//   fit_demo [n=2048] [seed=1]

#include <cstdio>
#include <cstdlib>

#include "gphodlr/gphodlr.hpp"

int main(int argc, char** argv) {
  const std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 2048;
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 1;
  const gphodlr::CovarianceModel model(gphodlr::KernelId::matern_alt, 1.0);
  const Eigen::Vector2d truth(3.0, 5.0);

  try {
    const auto points = gphodlr::random_locations(n, 2, 100.0, seed);
    const Eigen::VectorXd y = gphodlr::simulate_gp(model, truth, points, seed + 1);

    gphodlr::HodlrFitConfig cfg;
    cfg.seed = seed;
    const auto h = gphodlr::fit_hodlr(model, points, y, Eigen::Vector2d(2.0, 2.0), cfg);
    const auto e = gphodlr::fit_exact(model, points, y, h.theta_hat);

    std::printf("n = %zu, truth (%.2f, %.2f)\n\n", n, truth(0), truth(1));
    for (const auto* r : {&h, &e}) {
      std::printf("%-6s %-10s %3d iterations, %.2f s\n", r == &h ? "HODLR" : "exact", r->status.c_str(),
                  r->iterations, r->timings.at("total"));
      const char* names[] = {"scale", "range"};
      for (int j = 0; j < 2; ++j) {
        std::printf("  %-5s %.4f  [%.4f, %.4f]\n", names[j], r->theta_hat(j), r->confidence.ci_lower(j),
                    r->confidence.ci_upper(j));
      }
    }
  } catch (const gphodlr::Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
