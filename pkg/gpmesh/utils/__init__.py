# __init__.py - Part of utils module
