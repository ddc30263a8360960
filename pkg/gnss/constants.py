SPEED_OF_LIGHT = 299792458.0          # m/s
EARTH_GM = 3.986004418e14             # m^3/s^2
ORBIT_RADIUS = 26_560_000.0           # m, MEO circular orbit radius

# Carrier frequencies (Hz) keyed by (constellation letter, band id).
FREQUENCIES = {
    ("G", "1"): 1575.42e6,   # GPS L1
    ("G", "2"): 1227.60e6,   # GPS L2
    ("E", "1"): 1575.42e6,   # Galileo E1
    ("E", "2"): 1207.14e6,   # Galileo E5b
    ("C", "1"): 1561.098e6,  # BeiDou B1I
    ("C", "2"): 1268.52e6,   # BeiDou B3I
}


def frequency(sat: str, band: str) -> float:
    try:
        return FREQUENCIES[(sat[0], band)]
    except KeyError:
        raise ValueError(f"unknown constellation/band combination: {sat[0]}/{band}")


def wavelength(sat: str, band: str) -> float:
    return SPEED_OF_LIGHT / frequency(sat, band)
