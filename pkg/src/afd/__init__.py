"""Active fault diagnosis by optimal input design on finite windows."""
