"""All-at-once regularization for identifying a learned reaction term.

Unknowns ``(c, phi, u0, u, theta)`` of the parabolic model
``u_t - u_xx + c u + h(u) = f_theta(u) + phi`` are recovered jointly from
observations of ``u`` by projected Landweber iteration or Tikhonov
regularization.
"""

__version__ = "0.1.0"
