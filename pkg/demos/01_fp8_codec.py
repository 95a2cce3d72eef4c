"""
The E4M3 codec
==============

Eight bits: one sign, four exponent, three mantissa, exponent bias 7.
There are no infinities and only two NaN codes, which pushes the largest
finite value up to 448.
"""

import numpy as np

from deltaquant import fp8

# Every code maps to one value. Look at a few landmarks.
for code in (0x00, 0x01, 0x08, 0x38, 0x7E, 0x7F, 0x80):
    print(f"0x{code:02X} -> {fp8.decode(code)!r}")

# Positive values are spaced evenly within each binade, so the gap doubles
# every time the exponent goes up.
table = fp8.value_table()[:0x7F]
print("gaps near 1:", np.diff(table[0x36:0x3B]))
print("gaps near 256:", np.diff(table[0x76:0x7B]))

# Encoding rounds to the nearest value. Exact ties go to the even code and
# anything past 448 saturates.
samples = np.array([1.0625, 1.1875, 2.0**-10, 447.0, 460.0, 1e6, -3.3])
codes = fp8.encode(samples)
for x, c in zip(samples, codes):
    print(f"{x:>12g} -> 0x{c:02X} -> {fp8.decode(int(c))}")

# Non-finite inputs are refused rather than silently mapped to NaN.
try:
    fp8.encode(np.inf)
except ValueError as err:
    print("rejected:", err)
