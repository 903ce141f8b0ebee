#include "stvg/rng.hpp"

#include <cmath>
#include <sstream>

namespace stvg {

std::string Rng::state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (is.fail()) throw std::runtime_error("Rng::set_state: malformed state string");
}

std::vector<double> normal_data(Rng& rng, size_t n, double mu, double sigma) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(mu, sigma);
    return v;
}

std::vector<double> xavier_uniform_data(Rng& rng, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> v(static_cast<size_t>(fan_in) * fan_out);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return v;
}

}  // namespace stvg
