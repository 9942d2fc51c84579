# Cascade network package
