# __init__.py - Part of commands module
