# __init__.py - Part of services module
