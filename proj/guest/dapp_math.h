/* Self-contained f64 math for the sensing pipeline. Pure arithmetic, no libm:
 * both build targets of the dApp execute the exact same operation sequence,
 * which keeps their outputs bit-identical. Domains are narrow (twiddle angles
 * |x| <= 2*pi, threshold exponents), accuracy ~1e-15. */

#ifndef DAPP_MATH_H
#define DAPP_MATH_H

#include <stdint.h>

#ifndef DAPP_STATIC
#define DAPP_STATIC static __attribute__((unused))
#endif

#define D_PI 3.14159265358979323846

/* sin on [-pi/4, pi/4], Taylor to r^15 */
DAPP_STATIC double d_sin_kernel(double r) {
    const double u = r * r;
    double p = -1.0 / 1307674368000.0; /* -1/15! */
    p = p * u + 1.0 / 6227020800.0;    /*  1/13! */
    p = p * u - 1.0 / 39916800.0;
    p = p * u + 1.0 / 362880.0;
    p = p * u - 1.0 / 5040.0;
    p = p * u + 1.0 / 120.0;
    p = p * u - 1.0 / 6.0;
    p = p * u + 1.0;
    return r * p;
}

/* cos on [-pi/4, pi/4], Taylor to r^16 */
DAPP_STATIC double d_cos_kernel(double r) {
    const double u = r * r;
    double p = 1.0 / 20922789888000.0; /* 1/16! */
    p = p * u - 1.0 / 87178291200.0;   /* 1/14! */
    p = p * u + 1.0 / 479001600.0;
    p = p * u - 1.0 / 3628800.0;
    p = p * u + 1.0 / 40320.0;
    p = p * u - 1.0 / 720.0;
    p = p * u + 1.0 / 24.0;
    p = p * u - 1.0 / 2.0;
    p = p * u + 1.0;
    return p;
}

/* quadrant reduction, valid for |x| <= 2*pi + 1 */
DAPP_STATIC uint32_t d_reduce(double x, double *r_out) {
    const double t = x * 0.63661977236758134308; /* 2/pi */
    const int32_t k = (int32_t)(t >= 0.0 ? t + 0.5 : t - 0.5);
    const double PIO2_H = 1.57079632679489655800e+00;
    const double PIO2_L = 6.12323399573676603587e-17;
    *r_out = (x - (double)k * PIO2_H) - (double)k * PIO2_L;
    return (uint32_t)k & 3u;
}

DAPP_STATIC double d_sin(double x) {
    double r;
    switch (d_reduce(x, &r)) {
    case 0: return d_sin_kernel(r);
    case 1: return d_cos_kernel(r);
    case 2: return -d_sin_kernel(r);
    default: return -d_cos_kernel(r);
    }
}

DAPP_STATIC double d_cos(double x) {
    double r;
    switch (d_reduce(x, &r)) {
    case 0: return d_cos_kernel(r);
    case 1: return -d_sin_kernel(r);
    case 2: return -d_cos_kernel(r);
    default: return d_sin_kernel(r);
    }
}

/* 10^x for x in [-30, 300) */
DAPP_STATIC double d_pow10(double x) {
    const double y = x * 3.32192809488736234787; /* log2(10) */
    int64_t n = (int64_t)y;
    if ((double)n > y) n--;
    const double f = y - (double)n; /* [0, 1) */
    const double t = f * 0.69314718055994530942;
    double e = 1.0;
    for (int32_t k = 17; k >= 1; k--) e = 1.0 + t * e / (double)k;
    union {
        uint64_t u;
        double d;
    } s;
    s.u = (uint64_t)(1023 + n) << 52;
    return e * s.d;
}

#endif /* DAPP_MATH_H */
