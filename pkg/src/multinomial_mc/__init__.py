"""Low-rank matrix completion over finite alphabets."""
