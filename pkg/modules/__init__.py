"""Command workflows of the uncertainty attention lab"""
