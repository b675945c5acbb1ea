#pragma once

// CODATA 2018 values (SI, exact where the 2019 SI redefinition fixes them).
namespace fluxtalk::constants {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline constexpr double kElementaryCharge = 1.602176634e-19;  // C
inline constexpr double kPlanck = 6.62607015e-34;             // J s
inline constexpr double kBoltzmann = 1.380649e-23;            // J / K
inline constexpr double kFluxQuantum = kPlanck / (2.0 * kElementaryCharge);  // Wb

inline constexpr double kMicroElectronVolt = 1e-6 * kElementaryCharge;  // J
inline constexpr double kJoulePerGHz = kPlanck * 1e9;                   // J per (GHz * h)

// MHz * ns -> cycles.
inline constexpr double kMHzNs = 1e-3;

}  // namespace fluxtalk::constants
