//! Check runners (under construction).
