#pragma once

namespace twsim {

// Steering angle envelope, rad.
inline constexpr double kMaxSteering = 3.14159265358979323846 / 9.0;

// Bicycle-model constants. Defaults are the simulated test vehicle.
struct VehicleParams {
    double m = 1500.0;       // kg
    double g = 9.81;         // m/s^2
    double i_z = 1800.0;     // kg m^2
    double c_d = 0.39;       // kg/m
    double r_e = 0.3;        // m
    double j_wheel = 0.8;    // kg m^2
    double l_f = 1.0;        // m
    double l_r = 1.0;        // m

    double wheelbase() const { return l_f + l_r; }
    // Throws InvalidInput unless every constant is strictly positive.
    void validate() const;
};

}  // namespace twsim
