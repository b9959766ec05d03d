"""Neural spectral transport representations for coordinate-based signal fitting."""
