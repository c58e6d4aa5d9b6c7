//! Scenario configs (under construction).
