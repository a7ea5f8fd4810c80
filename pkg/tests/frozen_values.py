"""Reference numbers printed by ``independent_oracle.py`` (30-digit mpmath), frozen."""

S0_ROBUST = dict(pi=0.625, kappa=0.625, theta1=-0.125, theta2=0.25, value=0.108125)
S0_NEUTRAL = dict(pi=1.25, kappa=1.25, value=0.18625)
INSIDER_INSURANCE_DV = 0.24639151782819172727
INSIDER_NEUTRAL_DV = 0.34657359027997265471
SJ_ROBUST_KAPPA = 0.15484574527148342249
SJ_ROBUST_THETA4 = 0.18321595661992320851
SJ_NEUTRAL_KAPPA = 0.28571428571428571429
SL_NEUTRAL = dict(pi=1.6666666666666666667, kappa=1.25, value=0.19666666666666666667)
CRITICAL_T0 = 4.5028648366424681259

# S0 + unit-kernel insider on the insurance noise, T0 = 2: closed-form controls at (t, S)
INSIDER_KAPPA_AT_HALF = (0.5, 0.4, 0.35)
ASSET_INSIDER_PI_AT_HALF = (0.5, 0.4, 1.55)
