#pragma once

#include "fastadapt/channel.hpp"
#include "fastadapt/complex_matrix.hpp"
#include "fastadapt/rng.hpp"

#include <cmath>
#include <random>

namespace fatest {

using namespace fastadapt;

inline ComplexMatrix random_complex(Index r, Index c, Rng& rng, double sd = 1.0)
{
    std::normal_distribution<double> n(0.0, sd);
    ComplexMatrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) {
        m.re().data()[i] = n(rng);
        m.im().data()[i] = n(rng);
    }
    return m;
}

inline ComplexMatrix random_hpd(Index n, Rng& rng, double shift = 1.0)
{
    const ComplexMatrix a = random_complex(n, n, rng);
    return a * a.adjoint() + ComplexMatrix::identity(n).scaled(shift);
}

inline SystemConfig small_system()
{
    SystemConfig s;
    s.num_users = 2;
    s.tx_antennas = 4;
    s.rx_antennas = 2;
    s.streams_per_user = 1;
    return s;
}

inline ChannelSample iid_sample(const SystemConfig& s, Rng& rng)
{
    ChannelSample out;
    for (Index k = 0; k < s.num_users; ++k) {
        out.H.push_back(random_complex(s.rx_antennas, s.tx_antennas, rng, std::sqrt(0.5)));
    }
    return out;
}

inline EigenComplex eig(const ComplexMatrix& m)
{
    return m.to_eigen();
}

} // namespace fatest
