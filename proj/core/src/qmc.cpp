#include "catflow/qmc.hpp"

#include "catflow/rng.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/random/sobol.hpp>

#include <algorithm>
#include <cmath>

namespace catflow {

RqmcDraws rqmc_normal_draws(int dim, int count, int replicates, Rng& rng) {
  require(dim >= 1 && count >= 1, "rqmc_normal_draws: dim and count must be >= 1");
  require(replicates >= 1 && replicates <= count, "rqmc_normal_draws: need 1 <= replicates <= count");
  const boost::math::normal_distribution<double> std_normal;
  const int per = (count + replicates - 1) / replicates;

  // One net shared by all replicates; the shifts make them independent.
  boost::random::sobol net(static_cast<std::size_t>(dim));
  const double scale = 1.0 / (static_cast<double>(net.max()) - static_cast<double>(net.min()) + 1.0);
  Matrix base(per, dim);
  for (int i = 0; i < per; ++i) {
    for (int d = 0; d < dim; ++d) base(i, d) = static_cast<double>(net() - net.min()) * scale;
  }

  RqmcDraws out;
  out.points.resize(count, dim);
  out.replicate.resize(static_cast<std::size_t>(count));
  out.replicates = replicates;
  int row = 0;
  for (int r = 0; r < replicates; ++r) {
    // Rows [r*count/R, (r+1)*count/R) belong to replicate r.
    const int end = static_cast<int>(static_cast<long>(count) * (r + 1) / replicates);
    std::vector<double> shift(static_cast<std::size_t>(dim));
    for (double& s : shift) s = rng.uniform();
    for (int i = 0; row < end; ++i, ++row) {
      for (int d = 0; d < dim; ++d) {
        double u = base(i, d) + shift[static_cast<std::size_t>(d)];
        u -= std::floor(u);
        u = std::clamp(u, 1e-300, 1.0 - 1e-16);
        out.points(row, d) = boost::math::quantile(std_normal, u);
      }
      out.replicate[static_cast<std::size_t>(row)] = r;
    }
  }
  return out;
}

}  // namespace catflow
