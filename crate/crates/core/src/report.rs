//! Reporting (under construction).
